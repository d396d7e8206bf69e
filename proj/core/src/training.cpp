#include "pneumo/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "pneumo/error.hpp"
#include "pneumo/metrics.hpp"
#include "pneumo/ops.hpp"

namespace pneumo {

namespace {

std::string fmt_g(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// Held-out split of sample indices: validation first (at least one sample
// when the set allows it), rest train.
void split_indices(std::size_t n, double val_fraction, Rng& rng, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& val) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  if (n_val == 0 && n >= 2) n_val = 1;
  val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
}

struct ValMetrics {
  double loss = 0.0;
  std::optional<double> f1;
  std::optional<double> auroc_value;
};

ValMetrics score_validation(const std::vector<double>& probs, const std::vector<int>& labels) {
  ValMetrics m;
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) loss += ops::bce_loss(probs[i], labels[i]).loss;
  m.loss = loss / static_cast<double>(probs.size());
  m.auroc_value = maybe_auroc(probs, labels);
  m.f1 = prf1(confusion(probs, labels, 0.5)).f1;
  return m;
}

template <typename Model>
std::vector<Tensor> snapshot_params(Model& model) {
  std::vector<Tensor> out;
  for (auto& p : model.params()) out.push_back(*p.value);
  return out;
}

template <typename Model>
void restore_params(Model& model, const std::vector<Tensor>& snapshot) {
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = snapshot[i];
}

}  // namespace

void validate_train_config(const TrainConfig& c) {
  if (c.batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
  if (c.epochs < 1) throw ConfigError("train config: epochs must be >= 1");
  if (c.val_fraction <= 0.0 || c.val_fraction >= 1.0)
    throw ConfigError("train config: val fraction must lie in (0,1)");
  if (c.patches_per_image < 1) throw ConfigError("train config: patches per image must be >= 1");
}

void write_history(const std::filesystem::path& file, const TrainHistory& history) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write history " + file.string());
  out << "epoch\tlr\ttrain_loss\tval_loss\tval_f1\tval_auroc\n";
  for (const auto& row : history.rows) {
    out << row.epoch << '\t' << fmt_g(row.lr) << '\t' << fmt_g(row.train_loss) << '\t'
        << fmt_g(row.val_loss) << '\t' << (row.val_f1 ? fmt_g(*row.val_f1) : "na") << '\t'
        << (row.val_auroc ? fmt_g(*row.val_auroc) : "na") << '\n';
  }
  if (history.best_epoch >= 0) out << "# best_epoch " << history.best_epoch << '\n';
  if (!history.val_ids.empty()) {
    out << "# validation";
    for (const auto& id : history.val_ids) out << ' ' << id;
    out << '\n';
  }
  for (const auto& w : history.warnings) out << "# warning " << w << '\n';
}

Stage1Result train_stage1(const TrainConfig& config, const PatchNetConfig& arch,
                          const std::vector<ImageSample>& dataset, Rng& rng,
                          const EpochCallback& on_epoch) {
  validate_train_config(config);
  if (dataset.empty()) throw ParameterError("train_stage1: dataset is empty");
  for (const auto& s : dataset)
    if (s.pixels.dim(1) < arch.input_side)
      throw ParameterError("train_stage1: image '" + s.id + "' is smaller than the patch side");

  Rng split_rng = rng.fork();
  Rng init_rng = rng.fork();
  Rng val_rng = rng.fork();
  Rng sample_rng = rng.fork();
  Rng shuffle_rng = rng.fork();
  Rng dropout_rng = rng.fork();

  std::vector<std::size_t> train_idx, val_idx;
  split_indices(dataset.size(), config.val_fraction, split_rng, train_idx, val_idx);
  if (train_idx.empty()) throw ParameterError("train_stage1: no training samples after the split");

  PatchNet model(arch, init_rng);

  // fixed validation patch set
  std::vector<PatchSample> val_patches;
  for (std::size_t idx : val_idx) {
    auto patches = sample_patches(dataset[idx], arch.input_side, config.patches_per_image, val_rng,
                                  config.patch_options);
    for (auto& p : patches) val_patches.push_back(std::move(p));
  }

  auto params = model.params();
  std::vector<AdamState> states;
  for (const auto& p : params) states.push_back(make_adam_state(*p.value));

  TrainHistory history;
  for (std::size_t idx : val_idx) history.val_ids.push_back(dataset[idx].id);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  bool single_class_warned = false;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config.schedule, epoch);

    // fresh patches for every training image
    std::vector<PatchSample> patches;
    for (std::size_t idx : train_idx) {
      auto drawn = sample_patches(dataset[idx], arch.input_side, config.patches_per_image,
                                  sample_rng, config.patch_options);
      for (auto& p : drawn) patches.push_back(std::move(p));
    }
    if (epoch == 0 && !single_class_warned) {
      const bool any0 = std::any_of(patches.begin(), patches.end(),
                                    [](const PatchSample& p) { return p.label == 0; });
      const bool any1 = std::any_of(patches.begin(), patches.end(),
                                    [](const PatchSample& p) { return p.label == 1; });
      if (!(any0 && any1)) {
        history.warnings.push_back("epoch 0 produced a single-class patch stream");
        single_class_warned = true;
      }
    }

    std::vector<std::size_t> order(patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    auto grads = model.zero_grads();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) g.fill(0.0);
      for (std::size_t k = start; k < end; ++k) {
        const auto& patch = patches[order[k]];
        PatchNet::Tape tape;
        const double p = model.forward_train(patch.patch, dropout_rng, tape);
        const auto bce = ops::bce_loss(p, patch.label);
        loss_sum += bce.loss;
        model.backward(tape, bce.dloss_dp * inv_batch, grads);
      }
      for (std::size_t i = 0; i < params.size(); ++i)
        adam_step(*params[i].value, grads[i], states[i], lr);
    }
    const double train_loss = loss_sum / static_cast<double>(patches.size());
    if (!std::isfinite(train_loss))
      throw NumericError("train_stage1: non-finite training loss at epoch " + std::to_string(epoch));

    std::vector<double> val_probs;
    std::vector<int> val_labels;
    for (const auto& p : val_patches) {
      val_probs.push_back(model.forward(p.patch));
      val_labels.push_back(p.label);
    }
    const ValMetrics vm = score_validation(val_probs, val_labels);
    history.rows.push_back({epoch, lr, train_loss, vm.loss, vm.f1, vm.auroc_value});
    if (on_epoch) on_epoch(history.rows.back());

    if (vm.loss < best_val) {
      best_val = vm.loss;
      best_params = snapshot_params(model);
      history.best_epoch = epoch;
    }
  }

  if (config.select_best && !best_params.empty()) restore_params(model, best_params);
  quantize_params_f32(model.params());
  return {std::move(model), std::move(history)};
}

Stage2Result train_stage2(const TrainConfig& config, const FusionNetConfig& arch,
                          const std::vector<ImageSample>& dataset, const PatchNet& stage1,
                          const WindowGrid& grid, double heatmap_threshold, Rng& rng,
                          const HeatmapSource& cache, const EpochCallback& on_epoch) {
  validate_train_config(config);
  if (dataset.empty()) throw ParameterError("train_stage2: dataset is empty");
  if (grid.patch_side != stage1.config().input_side)
    throw ConfigError("train_stage2: grid patch side does not match the stage-1 input side");
  if (grid.grid_side != arch.heatmap_side)
    throw ConfigError("train_stage2: grid side " + std::to_string(grid.grid_side) +
                      " does not match fusion heatmap side " + std::to_string(arch.heatmap_side));

  Rng split_rng = rng.fork();
  Rng init_rng = rng.fork();
  Rng shuffle_rng = rng.fork();
  Rng dropout_rng = rng.fork();

  // heatmaps computed once per image (or taken from the cache), plus the
  // stage-2 input resize
  const auto scorer = [&](const Tensor& patch) { return stage1.forward(patch); };
  std::vector<Tensor> heatmaps(dataset.size());
  std::vector<Tensor> images(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset[i];
    if (s.pixels.dim(1) != grid.full_side)
      throw ConfigError("train_stage2: image '" + s.id + "' is not at the working side");
    if (cache) {
      heatmaps[i] = cache(s.id);
      if (heatmaps[i].rank() != 3 || heatmaps[i].dim(1) != arch.heatmap_side ||
          heatmaps[i].dim(2) != arch.heatmap_side)
        throw ConfigError("train_stage2: cached heatmap for '" + s.id + "' has the wrong shape");
    } else {
      heatmaps[i] = build_heatmap(scorer, s.pixels, grid, heatmap_threshold).bits_tensor();
    }
    images[i] = resize_area(s.pixels, arch.image.input_side);
  }

  std::vector<std::size_t> train_idx, val_idx;
  split_indices(dataset.size(), config.val_fraction, split_rng, train_idx, val_idx);
  if (train_idx.empty()) throw ParameterError("train_stage2: no training samples after the split");

  FusionNet model(arch, init_rng);
  auto params = model.params();
  std::vector<AdamState> states;
  for (const auto& p : params) states.push_back(make_adam_state(*p.value));

  TrainHistory history;
  for (std::size_t idx : val_idx) history.val_ids.push_back(dataset[idx].id);
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at_epoch(config.schedule, epoch);
    std::vector<std::size_t> order = train_idx;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    auto grads = model.zero_grads();
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (auto& g : grads) g.fill(0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        FusionNet::Tape tape;
        const double p = model.forward_train(images[idx], heatmaps[idx], dropout_rng, tape);
        const auto bce = ops::bce_loss(p, dataset[idx].label);
        loss_sum += bce.loss;
        model.backward(tape, bce.dloss_dp * inv_batch, grads);
      }
      for (std::size_t i = 0; i < params.size(); ++i)
        adam_step(*params[i].value, grads[i], states[i], lr);
    }
    const double train_loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(train_loss))
      throw NumericError("train_stage2: non-finite training loss at epoch " + std::to_string(epoch));

    std::vector<double> val_probs;
    std::vector<int> val_labels;
    for (std::size_t idx : val_idx) {
      val_probs.push_back(model.forward(images[idx], heatmaps[idx]));
      val_labels.push_back(dataset[idx].label);
    }
    ValMetrics vm;
    if (!val_probs.empty()) vm = score_validation(val_probs, val_labels);
    history.rows.push_back({epoch, lr, train_loss, vm.loss, vm.f1, vm.auroc_value});
    if (on_epoch) on_epoch(history.rows.back());

    if (!val_probs.empty() && vm.loss < best_val) {
      best_val = vm.loss;
      best_params = snapshot_params(model);
      history.best_epoch = epoch;
    }
  }

  if (config.select_best && !best_params.empty()) restore_params(model, best_params);
  quantize_params_f32(model.params());
  return {std::move(model), std::move(history)};
}

}  // namespace pneumo
