#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pneumo/dataset.hpp"
#include "pneumo/metrics.hpp"
#include "pneumo/regions.hpp"

namespace pneumo {

// One evaluated sample for the region-stratified table.
struct StratInput {
  int truth = 0;
  int predicted = 0;
  std::vector<BBox> boxes;  // original-resolution boxes (positives)
  int side = 0;
};

struct StratRow {
  std::string name;
  long long correct = 0;
  long long total = 0;
  std::optional<double> accuracy;  // empty on an empty group ("n/a")
};

struct StratTable {
  std::vector<StratRow> rows;  // review_area, other, all_positives, all_samples
};

StratTable stratified_accuracy(const std::vector<StratInput>& samples, const RegionRule& rule);

// Per-image triple from the reader study.
struct ReaderRecord {
  std::string id;
  int truth = 0;
  int human = 0;
  int model = 0;
  Category category = Category::none;
};

// Header line + one record per line: id truth human model category.
std::vector<ReaderRecord> load_reader_file(const std::filesystem::path& file);
void save_reader_file(const std::filesystem::path& file, const std::vector<ReaderRecord>& records);

struct ReaderCategoryRow {
  Category category = Category::none;
  long long n = 0;
  double human_acc = 0.0;
  double model_acc = 0.0;
};

struct ReaderReport {
  long long n = 0;
  double human_acc = 0.0;
  double model_acc = 0.0;
  double union_acc = 0.0;  // at least one agent correct
  std::vector<ReaderCategoryRow> per_category;
  std::vector<std::string> disagreements;  // exactly one agent correct
};

ReaderReport reader_compare(const std::vector<ReaderRecord>& records);

// Whole-pipeline evaluation summary.
struct EvalReport {
  long long n = 0;
  ConfusionCounts counts;
  Prf1 scores;
  std::optional<double> auroc;
  StratTable strat;
  // attention sanity over model true positives: lit heatmap bits whose
  // window intersects a ground-truth box
  long long tp_images = 0;
  long long lit_bits = 0;
  long long lit_hits = 0;
  std::optional<double> attention_hit_fraction;
  RegionRule rule;
  double threshold = 0.5;
};

// Plain-text (2-decimal display) and machine-readable key=value forms.
void write_eval_report_text(const std::filesystem::path& file, const EvalReport& report);
void write_eval_report_kv(const std::filesystem::path& file, const EvalReport& report);
void write_reader_report_text(const std::filesystem::path& file, const ReaderReport& report);
void write_reader_report_kv(const std::filesystem::path& file, const ReaderReport& report);

}  // namespace pneumo
