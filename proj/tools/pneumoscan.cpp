// pneumoscan: two-stage pneumonia screening pipeline over synthetic or
// pre-converted 8-bit grayscale chest films.
//
// Subcommands: synth, train-patch, heatmaps, train-fusion, predict, eval,
// compare-readers. All values live in one INI-style config file; every
// value can be overridden by a flag of the same dotted name.
//
// Exit codes: 0 success, 2 config error, 3 missing prerequisite artifact,
// 4 data error, 5 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <variant>
#include <string>
#include <vector>

#include "pneumo/checkpoint.hpp"
#include "pneumo/dataset.hpp"
#include "pneumo/evaluation.hpp"
#include "pneumo/image_io.hpp"
#include "pneumo/metrics.hpp"
#include "pneumo/models.hpp"
#include "pneumo/patching.hpp"
#include "pneumo/synth.hpp"
#include "pneumo/training.hpp"

namespace fs = std::filesystem;
using namespace pneumo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitData = 4;
constexpr int kExitNumeric = 5;

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  // synth
  int synth_count = 0;
  int synth_side = 64;
  double synth_positive_fraction = 0.4;
  double synth_review_fraction = 0.3;
  double synth_texture = 0.08;
  double synth_distractor_prob = 0.7;
  int synth_blobs_min = 1;
  int synth_blobs_max = 3;
  double synth_radius_min = 0.08;
  double synth_radius_max = 0.18;
  double synth_intensity_min = 0.25;
  double synth_intensity_max = 0.55;
  double synth_train_fraction = 0.8;
  double synth_test_fraction = 0.2;

  // geometry
  int full_side = 64;
  int patch_side = 32;
  int stride = 2;
  int stage2_side = 32;

  // stage-1 network
  int p_base_channels = 8;
  int p_blocks = 3;
  bool p_extra_conv = true;
  double p_dropout = 0.5;
  int p_channel_cap = 256;

  // stage-2 network
  int f_heatmap_channels = 8;
  int f_base_channels = 8;
  int f_blocks = 3;
  bool f_extra_conv = true;
  double f_dropout = 0.5;
  int f_channel_cap = 256;

  // training
  int batch_size = 16;
  double base_lr = 1e-5;
  double lr_gamma = 0.9;
  int lr_period = 50;
  int stage1_epochs = 10;
  int stage2_epochs = 10;
  int patches_per_image = 2;
  double val_fraction = 0.2;
  double patch_threshold = 0.10;
  double positive_bias = 0.0;
  std::uint64_t augment_total = 0;
  bool select_best = true;

  // thresholds
  double heatmap_threshold = 0.5;
  double decision_threshold = 0.5;

  // regions
  RegionRule regions;

  // data paths (resolved after parsing; empty = defaults under out/data)
  std::string train_manifest;
  std::string test_manifest;
};

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Independent deterministic stream per purpose; identical across
// subcommands so on-disk handoffs line up.
Rng stream_for(std::uint64_t seed, const std::string& tag) {
  std::uint64_t s = seed ^ fnv1a64(tag);
  return Rng(splitmix64(s));
}

std::string canonical_dump(const RunConfig& c) {
  char buf[64];
  std::map<std::string, std::string> kv;
  const auto put_d = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    kv[k] = buf;
  };
  const auto put_i = [&](const char* k, long long v) { kv[k] = std::to_string(v); };
  put_i("seed", static_cast<long long>(c.seed));
  kv["out"] = c.out_dir;
  put_i("synth.count", c.synth_count);
  put_i("synth.side", c.synth_side);
  put_d("synth.positive_fraction", c.synth_positive_fraction);
  put_d("synth.review_fraction", c.synth_review_fraction);
  put_d("synth.texture", c.synth_texture);
  put_d("synth.distractor_prob", c.synth_distractor_prob);
  put_i("synth.blobs_min", c.synth_blobs_min);
  put_i("synth.blobs_max", c.synth_blobs_max);
  put_d("synth.radius_min", c.synth_radius_min);
  put_d("synth.radius_max", c.synth_radius_max);
  put_d("synth.intensity_min", c.synth_intensity_min);
  put_d("synth.intensity_max", c.synth_intensity_max);
  put_d("synth.train_fraction", c.synth_train_fraction);
  put_d("synth.test_fraction", c.synth_test_fraction);
  put_i("geometry.full_side", c.full_side);
  put_i("geometry.patch_side", c.patch_side);
  put_i("geometry.stride", c.stride);
  put_i("geometry.stage2_side", c.stage2_side);
  put_i("patchnet.base_channels", c.p_base_channels);
  put_i("patchnet.blocks", c.p_blocks);
  put_i("patchnet.extra_conv", c.p_extra_conv);
  put_d("patchnet.dropout", c.p_dropout);
  put_i("patchnet.channel_cap", c.p_channel_cap);
  put_i("fusionnet.heatmap_channels", c.f_heatmap_channels);
  put_i("fusionnet.base_channels", c.f_base_channels);
  put_i("fusionnet.blocks", c.f_blocks);
  put_i("fusionnet.extra_conv", c.f_extra_conv);
  put_d("fusionnet.dropout", c.f_dropout);
  put_i("fusionnet.channel_cap", c.f_channel_cap);
  put_i("train.batch_size", c.batch_size);
  put_d("train.base_lr", c.base_lr);
  put_d("train.gamma", c.lr_gamma);
  put_i("train.period", c.lr_period);
  put_i("train.stage1_epochs", c.stage1_epochs);
  put_i("train.stage2_epochs", c.stage2_epochs);
  put_i("train.patches_per_image", c.patches_per_image);
  put_d("train.val_fraction", c.val_fraction);
  put_d("train.patch_threshold", c.patch_threshold);
  put_d("train.positive_bias", c.positive_bias);
  put_i("train.augment_total", static_cast<long long>(c.augment_total));
  put_i("train.select_best", c.select_best);
  put_d("thresholds.heatmap", c.heatmap_threshold);
  put_d("thresholds.decision", c.decision_threshold);
  put_d("regions.apex_y0", c.regions.apex_y0);
  put_d("regions.apex_y1", c.regions.apex_y1);
  put_d("regions.heart_x0", c.regions.heart_x0);
  put_d("regions.heart_x1", c.regions.heart_x1);
  put_d("regions.heart_y0", c.regions.heart_y0);
  put_d("regions.heart_y1", c.regions.heart_y1);
  kv["data.train_manifest"] = c.train_manifest;
  kv["data.test_manifest"] = c.test_manifest;
  std::string dump;
  for (const auto& [k, v] : kv) dump += k + "=" + v + "\n";
  return dump;
}

// One table drives the INI loader and the CLI11 flag registration, so
// a config key and its override flag can never drift apart.
struct Binding {
  std::string name;
  std::variant<int*, double*, bool*, std::string*, std::uint64_t*> target;
};

std::vector<Binding> bindings(RunConfig& c) {
  return {
      {"seed", &c.seed},
      {"out", &c.out_dir},
      {"synth.count", &c.synth_count},
      {"synth.side", &c.synth_side},
      {"synth.positive_fraction", &c.synth_positive_fraction},
      {"synth.review_fraction", &c.synth_review_fraction},
      {"synth.texture", &c.synth_texture},
      {"synth.distractor_prob", &c.synth_distractor_prob},
      {"synth.blobs_min", &c.synth_blobs_min},
      {"synth.blobs_max", &c.synth_blobs_max},
      {"synth.radius_min", &c.synth_radius_min},
      {"synth.radius_max", &c.synth_radius_max},
      {"synth.intensity_min", &c.synth_intensity_min},
      {"synth.intensity_max", &c.synth_intensity_max},
      {"synth.train_fraction", &c.synth_train_fraction},
      {"synth.test_fraction", &c.synth_test_fraction},
      {"geometry.full_side", &c.full_side},
      {"geometry.patch_side", &c.patch_side},
      {"geometry.stride", &c.stride},
      {"geometry.stage2_side", &c.stage2_side},
      {"patchnet.base_channels", &c.p_base_channels},
      {"patchnet.blocks", &c.p_blocks},
      {"patchnet.extra_conv", &c.p_extra_conv},
      {"patchnet.dropout", &c.p_dropout},
      {"patchnet.channel_cap", &c.p_channel_cap},
      {"fusionnet.heatmap_channels", &c.f_heatmap_channels},
      {"fusionnet.base_channels", &c.f_base_channels},
      {"fusionnet.blocks", &c.f_blocks},
      {"fusionnet.extra_conv", &c.f_extra_conv},
      {"fusionnet.dropout", &c.f_dropout},
      {"fusionnet.channel_cap", &c.f_channel_cap},
      {"train.batch_size", &c.batch_size},
      {"train.base_lr", &c.base_lr},
      {"train.gamma", &c.lr_gamma},
      {"train.period", &c.lr_period},
      {"train.stage1_epochs", &c.stage1_epochs},
      {"train.stage2_epochs", &c.stage2_epochs},
      {"train.patches_per_image", &c.patches_per_image},
      {"train.val_fraction", &c.val_fraction},
      {"train.patch_threshold", &c.patch_threshold},
      {"train.positive_bias", &c.positive_bias},
      {"train.augment_total", &c.augment_total},
      {"train.select_best", &c.select_best},
      {"thresholds.heatmap", &c.heatmap_threshold},
      {"thresholds.decision", &c.decision_threshold},
      {"regions.apex_y0", &c.regions.apex_y0},
      {"regions.apex_y1", &c.regions.apex_y1},
      {"regions.heart_x0", &c.regions.heart_x0},
      {"regions.heart_x1", &c.regions.heart_x1},
      {"regions.heart_y0", &c.regions.heart_y0},
      {"regions.heart_y1", &c.regions.heart_y1},
      {"data.train_manifest", &c.train_manifest},
      {"data.test_manifest", &c.test_manifest},
  };
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void assign(const Binding& b, const std::string& raw, const std::string& where) {
  const std::string v = trim(raw);
  try {
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = v;
          } else if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "1" || v == "yes")
              *p = true;
            else if (v == "false" || v == "0" || v == "no")
              *p = false;
            else
              throw std::invalid_argument("not a boolean");
          } else if constexpr (std::is_same_v<T, double>) {
            std::size_t used = 0;
            *p = std::stod(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
          } else {
            std::size_t used = 0;
            const long long parsed = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing characters");
            *p = static_cast<T>(parsed);
          }
        },
        b.target);
  } catch (const std::exception&) {
    throw ConfigError(where + ": cannot parse '" + raw + "' for " + b.name);
  }
}

// INI-style config: [section] plus key=value, '#' or ';' comments. Keys
// address the same dotted names as the override flags.
void apply_config_file(const std::string& file, RunConfig& cfg) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file);
  auto binds = bindings(cfg);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = file + ":" + std::to_string(lineno);
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    const std::string value = line.substr(eq + 1);
    bool found = false;
    for (const auto& b : binds)
      if (b.name == full) {
        assign(b, value, where);
        found = true;
        break;
      }
    if (!found) throw ConfigError(where + ": unknown config key '" + full + "'");
  }
}

// The config file must be known before flags are parsed, so flags can
// override it; scan argv directly.
std::string find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return "";
}

// Holds an exclusive lock file in the output directory for the process
// lifetime; one writer per output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.string().c_str(), "wx");
    if (!f)
      throw ConfigError("output directory " + dir.string() +
                        " is locked by another run (remove " + path_.string() +
                        " if that run is gone)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void write_run_manifest(const RunConfig& cfg, const std::string& command,
                        const std::vector<std::string>& artifacts) {
  const fs::path file = fs::path(cfg.out_dir) / ("run-" + command + ".manifest");
  std::ofstream out(file);
  if (!out) throw DataError("cannot write run manifest " + file.string());
  char stamp[64] = "unknown";
  const std::time_t now = std::time(nullptr);
  if (std::tm tm_buf; gmtime_r(&now, &tm_buf) != nullptr)
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm_buf);
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_dump(cfg))));
  out << "command=" << command << "\n";
  out << "seed=" << cfg.seed << "\n";
  out << "config_hash=" << hash << "\n";
  out << "timestamp=" << stamp << "\n";
  for (const auto& a : artifacts) out << "artifact=" << a << "\n";
}

void print_epoch(const EpochRecord& row) {
  char line[160];
  std::snprintf(line, sizeof line, "epoch %d  lr %.3g  train %.6f  val %.6f  f1 %s  auroc %s",
                row.epoch, row.lr, row.train_loss, row.val_loss,
                row.val_f1 ? std::to_string(*row.val_f1).c_str() : "na",
                row.val_auroc ? std::to_string(*row.val_auroc).c_str() : "na");
  std::cout << line << "\n";
}

PatchNetConfig stage1_arch(const RunConfig& c) {
  PatchNetConfig a;
  a.input_side = c.patch_side;
  a.base_channels = c.p_base_channels;
  a.blocks = c.p_blocks;
  a.extra_conv = c.p_extra_conv;
  a.dropout_rate = c.p_dropout;
  a.channel_cap = c.p_channel_cap;
  return a;
}

FusionNetConfig stage2_arch(const RunConfig& c, const WindowGrid& grid) {
  FusionNetConfig a;
  a.heatmap_side = grid.grid_side;
  a.heatmap_channels = c.f_heatmap_channels;
  a.dropout_rate = c.f_dropout;
  a.image.input_side = c.stage2_side;
  a.image.base_channels = c.f_base_channels;
  a.image.blocks = c.f_blocks;
  a.image.extra_conv = c.f_extra_conv;
  a.image.dropout_rate = c.f_dropout;
  a.image.channel_cap = c.f_channel_cap;
  return a;
}

TrainConfig train_config(const RunConfig& c, int epochs) {
  TrainConfig t;
  t.batch_size = c.batch_size;
  t.schedule = {c.base_lr, c.lr_gamma, c.lr_period};
  t.epochs = epochs;
  t.patches_per_image = c.patches_per_image;
  t.val_fraction = c.val_fraction;
  t.patch_options.label_threshold = c.patch_threshold;
  t.patch_options.positive_bias = c.positive_bias;
  t.select_best = c.select_best;
  return t;
}

// Geometry checks shared by every command; rejects bad window grids
// before any compute starts.
WindowGrid validate_geometry(const RunConfig& c) {
  WindowGrid grid;
  try {
    grid = window_grid(c.full_side, c.patch_side, c.stride);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  if (c.stage2_side <= 0 || c.full_side % c.stage2_side != 0)
    throw ConfigError("geometry: stage2 side must divide the working side");
  validate_patchnet_config(stage1_arch(c));
  validate_fusionnet_config(stage2_arch(c, grid));
  return grid;
}

fs::path train_manifest_path(const RunConfig& c) {
  return c.train_manifest.empty() ? fs::path(c.out_dir) / "data" / "train.manifest"
                                  : fs::path(c.train_manifest);
}

fs::path test_manifest_path(const RunConfig& c) {
  return c.test_manifest.empty() ? fs::path(c.out_dir) / "data" / "test.manifest"
                                 : fs::path(c.test_manifest);
}

// Loads a manifest to working-resolution samples (pixels resized, boxes
// rescaled), then applies the deterministic augmentation expansion.
std::vector<ImageSample> load_working_samples(const RunConfig& cfg, const fs::path& manifest_file) {
  DatasetManifest manifest = load_manifest(manifest_file);
  if (manifest.image_side % cfg.full_side != 0)
    throw ConfigError("working side " + std::to_string(cfg.full_side) +
                      " does not divide the manifest image side " +
                      std::to_string(manifest.image_side));
  std::vector<ImageSample> samples;
  samples.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    ImageSample s = load_sample(manifest, rec);
    if (manifest.image_side != cfg.full_side) {
      s.pixels = resize_area(s.pixels, cfg.full_side);
      s.boxes = scale_boxes(s.boxes, manifest.image_side, cfg.full_side);
      if (s.label == 1 && s.boxes.empty())
        throw DataError("record '" + s.id + "': boxes vanished at the working resolution");
    }
    samples.push_back(std::move(s));
  }
  if (cfg.augment_total > 0) {
    Rng rng = stream_for(cfg.seed, "augment");
    samples = expand_with_augmentation(std::move(samples), cfg.augment_total, rng,
                                       default_augment_policy(cfg.full_side));
  }
  return samples;
}

PatchNet load_stage1(const RunConfig& cfg, TrainMeta* meta = nullptr) {
  const fs::path file = fs::path(cfg.out_dir) / "checkpoints" / "stage1.ckpt";
  if (!fs::exists(file))
    throw MissingInputError("stage-1 checkpoint " + file.string() +
                            " not found (run train-patch first)");
  return load_patchnet(file, meta);
}

FusionNet load_stage2(const RunConfig& cfg, TrainMeta* meta = nullptr) {
  const fs::path file = fs::path(cfg.out_dir) / "checkpoints" / "stage2.ckpt";
  if (!fs::exists(file))
    throw MissingInputError("stage-2 checkpoint " + file.string() +
                            " not found (run train-fusion first)");
  return load_fusionnet(file, meta);
}

int cmd_synth(const RunConfig& cfg) {
  DirLock lock(cfg.out_dir);
  SynthConfig sc;
  sc.count = cfg.synth_count;
  sc.side = cfg.synth_side;
  sc.positive_fraction = cfg.synth_positive_fraction;
  sc.review_fraction = cfg.synth_review_fraction;
  sc.texture = cfg.synth_texture;
  sc.distractor_prob = cfg.synth_distractor_prob;
  sc.blobs_min = cfg.synth_blobs_min;
  sc.blobs_max = cfg.synth_blobs_max;
  sc.blob_radius_min = cfg.synth_radius_min;
  sc.blob_radius_max = cfg.synth_radius_max;
  sc.blob_intensity_min = cfg.synth_intensity_min;
  sc.blob_intensity_max = cfg.synth_intensity_max;
  sc.regions = cfg.regions;

  const fs::path data_dir = fs::path(cfg.out_dir) / "data";
  Rng rng = stream_for(cfg.seed, "synth");
  DatasetManifest manifest = synth_to_disk(sc, rng, data_dir);

  auto parts = split(manifest, cfg.synth_train_fraction, cfg.synth_test_fraction,
                     stream_for(cfg.seed, "split").next_u64());
  save_manifest(data_dir / "train.manifest", parts.first);
  save_manifest(data_dir / "test.manifest", parts.second);

  std::cout << "synth: " << manifest.records.size() << " images (train "
            << parts.first.records.size() << ", test " << parts.second.records.size() << ") under "
            << data_dir.string() << "\n";
  write_run_manifest(cfg, "synth",
                     {"data/dataset.manifest", "data/train.manifest", "data/test.manifest"});
  return 0;
}

int cmd_train_patch(const RunConfig& cfg) {
  validate_geometry(cfg);
  DirLock lock(cfg.out_dir);
  auto samples = load_working_samples(cfg, train_manifest_path(cfg));

  Rng rng = stream_for(cfg.seed, "stage1");
  auto result = train_stage1(train_config(cfg, cfg.stage1_epochs), stage1_arch(cfg), samples, rng,
                             print_epoch);

  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.out_dir) / "history");
  TrainMeta meta{cfg.stage1_epochs, cfg.seed,
                 lr_at_epoch({cfg.base_lr, cfg.lr_gamma, cfg.lr_period}, cfg.stage1_epochs - 1)};
  save_patchnet(fs::path(cfg.out_dir) / "checkpoints" / "stage1.ckpt", result.model, meta);
  write_history(fs::path(cfg.out_dir) / "history" / "stage1_history.tsv", result.history);

  const auto& last = result.history.rows.back();
  std::cout << "train-patch: " << result.history.rows.size() << " epochs, final val loss "
            << last.val_loss << " (best epoch " << result.history.best_epoch << ")\n";
  for (const auto& w : result.history.warnings) std::cout << "warning: " << w << "\n";
  write_run_manifest(cfg, "train-patch",
                     {"checkpoints/stage1.ckpt", "history/stage1_history.tsv"});
  return 0;
}

int cmd_heatmaps(const RunConfig& cfg) {
  const WindowGrid grid = validate_geometry(cfg);
  DirLock lock(cfg.out_dir);
  PatchNet stage1 = load_stage1(cfg);
  if (stage1.config().input_side != cfg.patch_side)
    throw ConfigError("stage-1 checkpoint input side does not match geometry.patch_side");
  auto samples = load_working_samples(cfg, train_manifest_path(cfg));

  const fs::path dir = fs::path(cfg.out_dir) / "heatmaps";
  fs::create_directories(dir);
  const auto scorer = [&](const Tensor& p) { return stage1.forward(p); };
  for (const auto& s : samples)
    write_heatmap(dir, s.id, build_heatmap(scorer, s.pixels, grid, cfg.heatmap_threshold));

  std::cout << "heatmaps: wrote " << samples.size() << " grids (" << grid.grid_side << "x"
            << grid.grid_side << ") under " << dir.string() << "\n";
  write_run_manifest(cfg, "heatmaps", {"heatmaps/"});
  return 0;
}

int cmd_train_fusion(const RunConfig& cfg) {
  const WindowGrid grid = validate_geometry(cfg);
  DirLock lock(cfg.out_dir);
  PatchNet stage1 = load_stage1(cfg);
  auto samples = load_working_samples(cfg, train_manifest_path(cfg));

  const fs::path cache_dir = fs::path(cfg.out_dir) / "heatmaps";
  if (!fs::exists(cache_dir))
    throw MissingInputError("heatmap cache " + cache_dir.string() +
                            " not found (run heatmaps first)");
  const auto cache = [&](const std::string& id) {
    const fs::path file = cache_dir / (id + ".bits.txt");
    if (!fs::exists(file))
      throw ConfigError("heatmap cache/manifest mismatch: no heatmap for '" + id + "'");
    return read_heatmap_bits(file);
  };

  Rng rng = stream_for(cfg.seed, "stage2");
  auto result = train_stage2(train_config(cfg, cfg.stage2_epochs), stage2_arch(cfg, grid), samples,
                             stage1, grid, cfg.heatmap_threshold, rng, cache, print_epoch);

  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.out_dir) / "history");
  TrainMeta meta{cfg.stage2_epochs, cfg.seed,
                 lr_at_epoch({cfg.base_lr, cfg.lr_gamma, cfg.lr_period}, cfg.stage2_epochs - 1)};
  save_fusionnet(fs::path(cfg.out_dir) / "checkpoints" / "stage2.ckpt", result.model, meta);
  write_history(fs::path(cfg.out_dir) / "history" / "stage2_history.tsv", result.history);

  const auto& last = result.history.rows.back();
  std::cout << "train-fusion: " << result.history.rows.size() << " epochs, final val loss "
            << last.val_loss << " (best epoch " << result.history.best_epoch << ")\n";
  write_run_manifest(cfg, "train-fusion",
                     {"checkpoints/stage2.ckpt", "history/stage2_history.tsv"});
  return 0;
}

Pipeline load_pipeline(const RunConfig& cfg, const WindowGrid& grid) {
  Pipeline pipe;
  pipe.stage1 = load_stage1(cfg);
  pipe.stage2 = load_stage2(cfg);
  pipe.grid = grid;
  pipe.heatmap_threshold = cfg.heatmap_threshold;
  pipe.decision_threshold = cfg.decision_threshold;
  if (pipe.stage1.config().input_side != grid.patch_side)
    throw ConfigError("stage-1 checkpoint input side does not match geometry.patch_side");
  if (pipe.stage2.config().heatmap_side != grid.grid_side)
    throw ConfigError("stage-2 checkpoint heatmap side does not match the window grid");
  return pipe;
}

int cmd_predict(const RunConfig& cfg, const std::string& image_path) {
  const WindowGrid grid = validate_geometry(cfg);
  DirLock lock(cfg.out_dir);
  Pipeline pipe = load_pipeline(cfg, grid);

  ImageSample sample;
  sample.id = fs::path(image_path).stem().string();
  sample.pixels = read_pgm(image_path);
  if (sample.pixels.dim(1) != sample.pixels.dim(2))
    throw DataError("input image must be square");
  if (sample.pixels.dim(1) % cfg.full_side != 0)
    throw DataError("input image side must be a multiple of the working side");

  const Prediction pred = predict(pipe, sample);
  const fs::path dir = fs::path(cfg.out_dir) / "predictions";
  fs::create_directories(dir);
  write_heatmap(dir, sample.id, pred.heatmap);

  char line[128];
  std::snprintf(line, sizeof line, "id=%s probability=%.6f diagnosis=%d", sample.id.c_str(),
                pred.probability, pred.diagnosis);
  std::cout << line << "\n";
  write_run_manifest(cfg, "predict",
                     {"predictions/" + sample.id + ".probs.txt",
                      "predictions/" + sample.id + ".bits.txt"});
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const WindowGrid grid = validate_geometry(cfg);
  DirLock lock(cfg.out_dir);
  Pipeline pipe = load_pipeline(cfg, grid);
  DatasetManifest manifest = load_manifest(test_manifest_path(cfg));
  if (manifest.records.empty()) throw DataError("test manifest has no records");

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<StratInput> strat_in;
  long long tp_images = 0, lit_bits = 0, lit_hits = 0;

  const fs::path reports = fs::path(cfg.out_dir) / "reports";
  fs::create_directories(reports);
  std::ofstream table(reports / "eval_scores.tsv");
  table << "id\ttruth\tprobability\tdiagnosis\n";

  for (const auto& rec : manifest.records) {
    ImageSample sample = load_sample(manifest, rec);
    const Prediction pred = predict(pipe, sample);
    scores.push_back(pred.probability);
    labels.push_back(sample.label);
    strat_in.push_back({sample.label, pred.diagnosis, sample.boxes, manifest.image_side});
    char row[160];
    std::snprintf(row, sizeof row, "%s\t%d\t%.6f\t%d", rec.id.c_str(), sample.label,
                  pred.probability, pred.diagnosis);
    table << row << "\n";

    // attention sanity on model true positives: a lit bit counts as a hit
    // when its window overlaps any ground-truth box at working scale
    if (sample.label == 1 && pred.diagnosis == 1) {
      ++tp_images;
      const auto wboxes = scale_boxes(sample.boxes, manifest.image_side, grid.full_side);
      for (int r = 0; r < pred.heatmap.grid_side; ++r)
        for (int c2 = 0; c2 < pred.heatmap.grid_side; ++c2) {
          if (!pred.heatmap.bits[static_cast<std::size_t>(r) * pred.heatmap.grid_side + c2])
            continue;
          ++lit_bits;
          const PatchRect rect = grid.rect(r, c2);
          for (const auto& b : wboxes)
            if (rect.x < b.x + b.w && b.x < rect.x + rect.side && rect.y < b.y + b.h &&
                b.y < rect.y + rect.side) {
              ++lit_hits;
              break;
            }
        }
    }
  }

  EvalReport report;
  report.n = static_cast<long long>(scores.size());
  report.counts = confusion(scores, labels, cfg.decision_threshold);
  report.scores = prf1(report.counts);
  report.auroc = maybe_auroc(scores, labels);
  report.strat = stratified_accuracy(strat_in, cfg.regions);
  report.tp_images = tp_images;
  report.lit_bits = lit_bits;
  report.lit_hits = lit_hits;
  if (lit_bits > 0)
    report.attention_hit_fraction = static_cast<double>(lit_hits) / static_cast<double>(lit_bits);
  report.rule = cfg.regions;
  report.threshold = cfg.decision_threshold;

  write_eval_report_text(reports / "eval.txt", report);
  write_eval_report_kv(reports / "eval.kv", report);

  char line[160];
  std::snprintf(line, sizeof line, "eval: n=%lld f1=%s auroc=%s attention=%s",
                report.n, report.scores.f1 ? std::to_string(*report.scores.f1).c_str() : "n/a",
                report.auroc ? std::to_string(*report.auroc).c_str() : "n/a",
                report.attention_hit_fraction
                    ? std::to_string(*report.attention_hit_fraction).c_str()
                    : "n/a");
  std::cout << line << "\n";
  write_run_manifest(cfg, "eval",
                     {"reports/eval.txt", "reports/eval.kv", "reports/eval_scores.tsv"});
  return 0;
}

int cmd_compare_readers(const RunConfig& cfg, const std::string& readers_path) {
  DirLock lock(cfg.out_dir);
  const auto records = load_reader_file(readers_path);
  const ReaderReport report = reader_compare(records);

  const fs::path reports = fs::path(cfg.out_dir) / "reports";
  fs::create_directories(reports);
  write_reader_report_text(reports / "readers.txt", report);
  write_reader_report_kv(reports / "readers.kv", report);

  char line[128];
  std::snprintf(line, sizeof line, "compare-readers: n=%lld human=%.2f model=%.2f union=%.2f",
                report.n, report.human_acc, report.model_acc, report.union_acc);
  std::cout << line << "\n";
  write_run_manifest(cfg, "compare-readers", {"reports/readers.txt", "reports/readers.kv"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;
  std::string image_path, readers_path;

  CLI::App app{"two-stage patch-attention pneumonia screening pipeline"};
  std::string config_file_opt;
  app.add_option("--config", config_file_opt, "INI config file; sections match the dotted flag names");

  try {
    const std::string config_file = find_config_arg(argc, argv);
    if (!config_file.empty()) apply_config_file(config_file, cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  for (const auto& b : bindings(cfg))
    std::visit([&](auto* p) { app.add_option("--" + b.name, *p); }, b.target);

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset + train/test manifests");
  auto* train_patch = app.add_subcommand("train-patch", "train the stage-1 patch classifier");
  auto* heatmaps = app.add_subcommand("heatmaps", "write sliding-window heatmaps for the training set");
  auto* train_fusion = app.add_subcommand("train-fusion", "train the stage-2 fusion classifier");
  auto* predict_cmd = app.add_subcommand("predict", "classify one image and export its heatmap");
  predict_cmd->add_option("--image", image_path, "square 8-bit grayscale PGM")->required();
  auto* eval_cmd = app.add_subcommand("eval", "evaluate the pipeline on the test manifest");
  auto* readers = app.add_subcommand("compare-readers", "human/model complementarity report");
  readers->add_option("--readers", readers_path, "reader study file")->required();
  for (auto* sub : {synth, train_patch, heatmaps, train_fusion, predict_cmd, eval_cmd, readers})
    sub->fallthrough();
  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (synth->parsed()) return cmd_synth(cfg);
    if (train_patch->parsed()) return cmd_train_patch(cfg);
    if (heatmaps->parsed()) return cmd_heatmaps(cfg);
    if (train_fusion->parsed()) return cmd_train_fusion(cfg);
    if (predict_cmd->parsed()) return cmd_predict(cfg, image_path);
    if (eval_cmd->parsed()) return cmd_eval(cfg);
    if (readers->parsed()) return cmd_compare_readers(cfg, readers_path);
    std::cerr << "config error: no command selected\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingInputError& e) {
    std::cerr << "missing prerequisite: " << e.what() << "\n";
    return kExitMissing;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
