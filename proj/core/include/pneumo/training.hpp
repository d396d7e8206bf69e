#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pneumo/dataset.hpp"
#include "pneumo/models.hpp"
#include "pneumo/optim.hpp"
#include "pneumo/patching.hpp"
#include "pneumo/rng.hpp"

namespace pneumo {

struct TrainConfig {
  int batch_size = 16;
  LrSchedule schedule;  // defaults: 1e-5, x0.9 every 50 epochs
  int epochs = 1;
  int patches_per_image = 1;  // stage 1 only
  double val_fraction = 0.2;
  PatchSamplerOptions patch_options;
  // Restore the best-validation-loss parameters at the end. Turning this
  // off makes the result a pure function of the gradient stream, which
  // the no-validation-leakage test relies on.
  bool select_best = true;
};

void validate_train_config(const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_f1;
  std::optional<double> val_auroc;
};

struct TrainHistory {
  std::vector<EpochRecord> rows;
  std::vector<std::string> warnings;
  int best_epoch = -1;
  std::vector<std::string> val_ids;  // samples held out of every gradient
};

// Tab-separated table, one row per epoch; warnings appended as comments.
void write_history(const std::filesystem::path& file, const TrainHistory& history);

// Invoked after each epoch's row is recorded (console mirroring).
using EpochCallback = std::function<void(const EpochRecord&)>;

struct Stage1Result {
  PatchNet model;
  TrainHistory history;
};

// Stage 1: fresh random patches per image every epoch, shuffled, batched,
// BCE + Adam at the scheduled rate. The validation image split is held
// out before any patching; its patch set is drawn once and reused.
Stage1Result train_stage1(const TrainConfig& config, const PatchNetConfig& arch,
                          const std::vector<ImageSample>& dataset, Rng& rng,
                          const EpochCallback& on_epoch = nullptr);

// Optional precomputed heatmap source keyed by sample id; nullptr entries
// are not allowed (a miss is a configuration error).
using HeatmapSource = std::function<Tensor(const std::string& id)>;

struct Stage2Result {
  FusionNet model;
  TrainHistory history;
};

// Stage 2: heatmaps come from the frozen stage-1 model (computed once and
// cached) or from `cache` when given; image+heatmap pairs are batched and
// trained with the same loop. Stage-1 parameters are never touched.
Stage2Result train_stage2(const TrainConfig& config, const FusionNetConfig& arch,
                          const std::vector<ImageSample>& dataset, const PatchNet& stage1,
                          const WindowGrid& grid, double heatmap_threshold, Rng& rng,
                          const HeatmapSource& cache = nullptr,
                          const EpochCallback& on_epoch = nullptr);

}  // namespace pneumo
