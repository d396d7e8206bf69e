#include "pneumo/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "pneumo/error.hpp"

namespace pneumo {

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold) {
  if (scores.size() != labels.size())
    throw ParameterError("confusion: scores and labels differ in length");
  if (scores.empty()) throw ParameterError("confusion: inputs must be non-empty");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ParameterError("confusion: labels must be 0 or 1");
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      pred ? ++c.tp : ++c.fn;
    else
      pred ? ++c.fp : ++c.tn;
  }
  return c;
}

Prf1 prf1(const ConfusionCounts& c) {
  Prf1 out;
  if (c.tp + c.fp > 0) out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision && out.recall && *out.precision + *out.recall > 0.0)
    out.f1 = 2.0 * *out.precision * *out.recall / (*out.precision + *out.recall);
  return out;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw ParameterError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  if (n == 0) throw ParameterError("auroc: inputs must be non-empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tie groups, 1-based
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = avg;
    i = j;
  }

  long long pos = 0;
  double pos_rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      ++pos;
      pos_rank_sum += rank[k];
    } else if (labels[k] != 0) {
      throw ParameterError("auroc: labels must be 0 or 1");
    }
  }
  const long long neg = static_cast<long long>(n) - pos;
  if (pos == 0 || neg == 0)
    throw ParameterError("auroc: undefined on single-class input");
  const double u = pos_rank_sum - static_cast<double>(pos) * (pos + 1) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> maybe_auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  bool has_pos = false, has_neg = false;
  for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) return std::nullopt;
  return auroc(scores, labels);
}

}  // namespace pneumo
