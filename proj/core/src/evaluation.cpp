#include "pneumo/evaluation.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "pneumo/error.hpp"

namespace pneumo {

namespace {

constexpr const char* kReaderMagic = "pneumoscan-readers";
constexpr int kReaderVersion = 1;

std::string fmt(double v, int decimals) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string opt2(const std::optional<double>& v) { return v ? fmt(*v, 2) : "n/a"; }
std::string optg(const std::optional<double>& v) { return v ? fmt_g(*v) : "undefined"; }

}  // namespace

StratTable stratified_accuracy(const std::vector<StratInput>& samples, const RegionRule& rule) {
  StratRow review{"review_area"}, other{"other"}, positives{"all_positives"}, all{"all_samples"};
  for (const auto& s : samples) {
    const bool correct = s.truth == s.predicted;
    ++all.total;
    all.correct += correct;
    if (s.truth != 1) continue;
    if (s.boxes.empty())
      throw ParameterError("stratified_accuracy: positive sample without boxes");
    ++positives.total;
    positives.correct += correct;
    StratRow& row = region_of(s.boxes, s.side, rule) == Region::review_area ? review : other;
    ++row.total;
    row.correct += correct;
  }
  for (StratRow* row : {&review, &other, &positives, &all})
    if (row->total > 0)
      row->accuracy = static_cast<double>(row->correct) / static_cast<double>(row->total);
  return StratTable{{review, other, positives, all}};
}

std::vector<ReaderRecord> load_reader_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MissingInputError("cannot open reader file " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("reader file " + file.string() + " is empty");
  {
    std::istringstream head(line);
    std::string magic;
    int version = 0;
    if (!(head >> magic >> version) || magic != kReaderMagic || version != kReaderVersion)
      throw DataError("reader file " + file.string() + ": bad header '" + line + "'");
  }
  std::vector<ReaderRecord> out;
  std::set<std::string> seen;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ReaderRecord r;
    std::string cat;
    if (!(ls >> r.id >> r.truth >> r.human >> r.model >> cat))
      throw DataError("reader file " + file.string() + " line " + std::to_string(lineno) +
                      ": malformed row");
    r.category = category_from_name(cat);
    for (int v : {r.truth, r.human, r.model})
      if (v != 0 && v != 1)
        throw DataError("reader row '" + r.id + "': values must be 0 or 1");
    if ((r.category == Category::pneumonia) != (r.truth == 1))
      throw DataError("reader row '" + r.id + "': category pneumonia must match truth 1");
    if (!seen.insert(r.id).second)
      throw DataError("reader file " + file.string() + ": duplicate id '" + r.id + "'");
    out.push_back(std::move(r));
  }
  return out;
}

void save_reader_file(const std::filesystem::path& file, const std::vector<ReaderRecord>& records) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write reader file " + file.string());
  out << kReaderMagic << ' ' << kReaderVersion << '\n';
  for (const auto& r : records)
    out << r.id << ' ' << r.truth << ' ' << r.human << ' ' << r.model << ' '
        << category_name(r.category) << '\n';
}

ReaderReport reader_compare(const std::vector<ReaderRecord>& records) {
  if (records.empty()) throw ParameterError("reader_compare: no records");
  ReaderReport rep;
  rep.n = static_cast<long long>(records.size());
  long long human_ok = 0, model_ok = 0, union_ok = 0;
  struct Acc {
    long long n = 0, human = 0, model = 0;
  };
  Acc by_cat[3];  // pneumonia, other_disease, normal
  const auto cat_index = [](Category c) {
    switch (c) {
      case Category::pneumonia: return 0;
      case Category::other_disease: return 1;
      default: return 2;
    }
  };
  for (const auto& r : records) {
    const bool h = r.human == r.truth, m = r.model == r.truth;
    human_ok += h;
    model_ok += m;
    union_ok += h || m;
    auto& acc = by_cat[cat_index(r.category)];
    ++acc.n;
    acc.human += h;
    acc.model += m;
    if (h != m) rep.disagreements.push_back(r.id);
  }
  const double n = static_cast<double>(rep.n);
  rep.human_acc = human_ok / n;
  rep.model_acc = model_ok / n;
  rep.union_acc = union_ok / n;
  const Category order[3] = {Category::pneumonia, Category::other_disease, Category::normal};
  for (int i = 0; i < 3; ++i) {
    if (by_cat[i].n == 0) continue;
    rep.per_category.push_back({order[i], by_cat[i].n,
                                static_cast<double>(by_cat[i].human) / by_cat[i].n,
                                static_cast<double>(by_cat[i].model) / by_cat[i].n});
  }
  return rep;
}

void write_eval_report_text(const std::filesystem::path& file, const EvalReport& r) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write report " + file.string());
  out << "evaluation report\n";
  out << "samples: " << r.n << "\n";
  out << "threshold: " << fmt(r.threshold, 2) << "\n";
  out << "confusion: tp=" << r.counts.tp << " fp=" << r.counts.fp << " tn=" << r.counts.tn
      << " fn=" << r.counts.fn << "\n";
  out << "precision: " << opt2(r.scores.precision) << "\n";
  out << "recall:    " << opt2(r.scores.recall) << "\n";
  out << "f1:        " << opt2(r.scores.f1) << "\n";
  out << "auroc:     " << opt2(r.auroc) << "\n";
  out << "\nregion accuracy (positives stratified by box location)\n";
  for (const auto& row : r.strat.rows)
    out << "  " << row.name << ": " << opt2(row.accuracy) << "  (" << row.correct << "/"
        << row.total << ")\n";
  out << "\nattention sanity (model true positives)\n";
  out << "  images: " << r.tp_images << "  lit bits: " << r.lit_bits
      << "  box hits: " << r.lit_hits << "\n";
  out << "  hit fraction: " << opt2(r.attention_hit_fraction) << "\n";
  out << "\nregion rule: apex_y=[" << fmt(r.rule.apex_y0, 2) << "," << fmt(r.rule.apex_y1, 2)
      << "] heart_x=[" << fmt(r.rule.heart_x0, 2) << "," << fmt(r.rule.heart_x1, 2) << "] heart_y=["
      << fmt(r.rule.heart_y0, 2) << "," << fmt(r.rule.heart_y1, 2) << "]\n";
}

void write_eval_report_kv(const std::filesystem::path& file, const EvalReport& r) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write report " + file.string());
  out << "samples=" << r.n << "\n";
  out << "threshold=" << fmt_g(r.threshold) << "\n";
  out << "confusion.tp=" << r.counts.tp << "\n";
  out << "confusion.fp=" << r.counts.fp << "\n";
  out << "confusion.tn=" << r.counts.tn << "\n";
  out << "confusion.fn=" << r.counts.fn << "\n";
  out << "metric.precision=" << optg(r.scores.precision) << "\n";
  out << "metric.recall=" << optg(r.scores.recall) << "\n";
  out << "metric.f1=" << optg(r.scores.f1) << "\n";
  out << "metric.auroc=" << optg(r.auroc) << "\n";
  for (const auto& row : r.strat.rows) {
    out << "region." << row.name << ".correct=" << row.correct << "\n";
    out << "region." << row.name << ".total=" << row.total << "\n";
    out << "region." << row.name << ".accuracy=" << optg(row.accuracy) << "\n";
  }
  out << "attention.tp_images=" << r.tp_images << "\n";
  out << "attention.lit_bits=" << r.lit_bits << "\n";
  out << "attention.lit_hits=" << r.lit_hits << "\n";
  out << "attention.hit_fraction=" << optg(r.attention_hit_fraction) << "\n";
  out << "rule.apex_y0=" << fmt_g(r.rule.apex_y0) << "\n";
  out << "rule.apex_y1=" << fmt_g(r.rule.apex_y1) << "\n";
  out << "rule.heart_x0=" << fmt_g(r.rule.heart_x0) << "\n";
  out << "rule.heart_x1=" << fmt_g(r.rule.heart_x1) << "\n";
  out << "rule.heart_y0=" << fmt_g(r.rule.heart_y0) << "\n";
  out << "rule.heart_y1=" << fmt_g(r.rule.heart_y1) << "\n";
}

void write_reader_report_text(const std::filesystem::path& file, const ReaderReport& r) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write report " + file.string());
  out << "reader comparison (" << r.n << " images)\n";
  out << "human accuracy: " << fmt(r.human_acc, 2) << "\n";
  out << "model accuracy: " << fmt(r.model_acc, 2) << "\n";
  out << "union accuracy: " << fmt(r.union_acc, 2) << "\n";
  out << "\nper category\n";
  for (const auto& row : r.per_category)
    out << "  " << category_name(row.category) << ": n=" << row.n << " human="
        << fmt(row.human_acc, 2) << " model=" << fmt(row.model_acc, 2) << "\n";
  out << "\ndisagreements (exactly one agent correct):";
  for (const auto& id : r.disagreements) out << ' ' << id;
  out << "\n";
}

void write_reader_report_kv(const std::filesystem::path& file, const ReaderReport& r) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write report " + file.string());
  out << "readers.n=" << r.n << "\n";
  out << "readers.human_acc=" << fmt_g(r.human_acc) << "\n";
  out << "readers.model_acc=" << fmt_g(r.model_acc) << "\n";
  out << "readers.union_acc=" << fmt_g(r.union_acc) << "\n";
  for (const auto& row : r.per_category) {
    const std::string key = std::string("readers.category.") + category_name(row.category);
    out << key << ".n=" << row.n << "\n";
    out << key << ".human_acc=" << fmt_g(row.human_acc) << "\n";
    out << key << ".model_acc=" << fmt_g(row.model_acc) << "\n";
  }
  out << "readers.disagreements=";
  for (std::size_t i = 0; i < r.disagreements.size(); ++i)
    out << (i ? "," : "") << r.disagreements[i];
  out << "\n";
}

}  // namespace pneumo
