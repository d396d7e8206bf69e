#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace pneumo {

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;

  long long total() const { return tp + fp + tn + fn; }
};

// prediction = score >= threshold (inclusive).
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold = 0.5);

// Undefined denominators surface as empty optionals, never as silent
// zeros; f1 is undefined when either component is.
struct Prf1 {
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};
Prf1 prf1(const ConfusionCounts& c);

// Pairwise-concordance AUROC via sorted rank sums with average ranks on
// ties. Requires at least one positive and one negative label.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// nullopt instead of throwing when only one class is present.
std::optional<double> maybe_auroc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace pneumo
