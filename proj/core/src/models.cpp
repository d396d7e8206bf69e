#include "pneumo/models.hpp"

#include <cmath>

#include "pneumo/error.hpp"

namespace pneumo {

namespace {

Tensor init_conv_weights(int out_ch, int in_ch, int k, Rng& rng) {
  Tensor w({out_ch, in_ch, k, k});
  const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * k * k));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

Tensor init_dense_weights(int out_n, int in_n, Rng& rng) {
  Tensor w({out_n, in_n});
  const double bound = std::sqrt(6.0 / static_cast<double>(in_n));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

Tensor gap(const Tensor& fmap) {
  const int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  Tensor out({c});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc += fmap.at(ch, y, x);
    out.at(ch) = acc * inv;
  }
  return out;
}

Tensor gap_backward(const Tensor& grad_features, int h, int w) {
  const int c = grad_features.dim(0);
  Tensor gi({c, h, w});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    const double g = grad_features.at(ch) * inv;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) gi.at(ch, y, x) = g;
  }
  return gi;
}

}  // namespace

void validate_patchnet_config(const PatchNetConfig& c) {
  if (c.input_side <= 0 || c.base_channels <= 0 || c.blocks <= 0 || c.channel_cap <= 0)
    throw ConfigError("patchnet config: sizes must be positive");
  if (c.kernel != 3) throw ConfigError("patchnet config: kernel is fixed at 3");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
    throw ConfigError("patchnet config: dropout rate must lie in [0,1)");
  const int divisor = 1 << c.blocks;
  if (c.input_side % divisor != 0)
    throw ConfigError("patchnet config: input side " + std::to_string(c.input_side) +
                      " is not divisible by 2^blocks = " + std::to_string(divisor));
}

int conv_layer_count(const PatchNetConfig& c) { return 2 * c.blocks + (c.extra_conv ? 1 : 0); }

std::vector<int> channel_plan(const PatchNetConfig& c) {
  std::vector<int> plan;
  for (int b = 0; b < c.blocks; ++b) {
    const int ch = std::min(c.base_channels << b, c.channel_cap);
    plan.push_back(ch);
    plan.push_back(ch);
  }
  if (c.extra_conv) plan.push_back(std::min(c.base_channels << c.blocks, c.channel_cap));
  return plan;
}

std::int64_t patchnet_param_count(const PatchNetConfig& c) {
  const auto plan = channel_plan(c);
  std::int64_t total = 0;
  int in_ch = 1;
  for (int out_ch : plan) {
    total += static_cast<std::int64_t>(out_ch) * in_ch * c.kernel * c.kernel + out_ch;
    in_ch = out_ch;
  }
  total += in_ch + 1;  // dense head
  return total;
}

ConvTrunk::ConvTrunk(const PatchNetConfig& config, Rng& rng) : cfg_(config) {
  validate_patchnet_config(config);
  const auto plan = channel_plan(config);
  int in_ch = 1;
  for (int out_ch : plan) {
    ConvLayer layer;
    layer.w = init_conv_weights(out_ch, in_ch, config.kernel, rng);
    layer.b = Tensor({out_ch});
    layer.pad = config.kernel / 2;
    convs_.push_back(std::move(layer));
    in_ch = out_ch;
  }
}

int ConvTrunk::feature_count() const { return convs_.back().w.dim(0); }

Tensor ConvTrunk::forward_impl(const Tensor& image, Rng* dropout_rng, Tape* tape) const {
  if (image.rank() != 3 || image.dim(0) != 1 || image.dim(1) != cfg_.input_side ||
      image.dim(2) != cfg_.input_side)
    throw DimensionError("trunk: input " + image.shape_str() + " does not match configured side " +
                         std::to_string(cfg_.input_side));
  Tensor x = image;
  std::size_t layer = 0;
  auto conv_relu = [&](const Tensor& in) {
    const auto& l = convs_[layer];
    if (tape) tape->conv_in.push_back(in);
    Tensor out = ops::conv2d(in, l.w, l.b, 1, l.pad);
    out = ops::activation(out, ops::Activation::relu);
    if (tape) tape->relu_out.push_back(out);
    ++layer;
    return out;
  };
  for (int b = 0; b < cfg_.blocks; ++b) {
    x = conv_relu(x);
    x = conv_relu(x);
    auto pooled = ops::maxpool2(x);
    if (tape) {
      tape->pool_argmax.push_back(std::move(pooled.argmax));
      tape->pool_in_shape.push_back(x.shape());
    }
    x = std::move(pooled.output);
  }
  if (cfg_.extra_conv) x = conv_relu(x);

  if (tape) tape->gap_spatial = {x.dim(1), x.dim(2)};
  Tensor feat = gap(x);
  if (!dropout_rng) return feat;
  auto dropped = ops::dropout(feat, cfg_.dropout_rate, *dropout_rng, true);
  if (tape) tape->dropout_scale = std::move(dropped.scale);
  return std::move(dropped.output);
}

Tensor ConvTrunk::features(const Tensor& image) const {
  // inference mode: dropout is the identity, no rng needed
  Tensor x = image;
  if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != cfg_.input_side || x.dim(2) != cfg_.input_side)
    throw DimensionError("trunk: input " + x.shape_str() + " does not match configured side " +
                         std::to_string(cfg_.input_side));
  std::size_t layer = 0;
  auto conv_relu = [&](const Tensor& in) {
    const auto& l = convs_[layer++];
    return ops::activation(ops::conv2d(in, l.w, l.b, 1, l.pad), ops::Activation::relu);
  };
  for (int b = 0; b < cfg_.blocks; ++b) {
    x = conv_relu(x);
    x = conv_relu(x);
    x = ops::maxpool2(x).output;
  }
  if (cfg_.extra_conv) x = conv_relu(x);
  return gap(x);
}

Tensor ConvTrunk::features_train(const Tensor& image, Rng& dropout_rng, Tape& tape) const {
  return forward_impl(image, &dropout_rng, &tape);
}

void ConvTrunk::backward(const Tape& tape, const Tensor& grad_features, std::vector<Tensor>& grads,
                         std::size_t grad_offset) const {
  Tensor g = ops::dropout_backward(tape.dropout_scale, grad_features);
  Tensor gmap = gap_backward(g, tape.gap_spatial[0], tape.gap_spatial[1]);

  int layer = static_cast<int>(convs_.size()) - 1;
  auto conv_relu_backward = [&](Tensor grad_out) {
    const auto& l = convs_[static_cast<std::size_t>(layer)];
    grad_out = ops::activation_backward(tape.relu_out[static_cast<std::size_t>(layer)],
                                        ops::Activation::relu, grad_out);
    auto cg = ops::conv2d_backward(tape.conv_in[static_cast<std::size_t>(layer)], l.w, 1, l.pad,
                                   grad_out);
    auto& gw = grads[grad_offset + static_cast<std::size_t>(layer) * 2];
    auto& gb = grads[grad_offset + static_cast<std::size_t>(layer) * 2 + 1];
    for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += cg.weights[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += cg.bias[i];
    --layer;
    return std::move(cg.input);
  };

  if (cfg_.extra_conv) gmap = conv_relu_backward(std::move(gmap));
  for (int b = cfg_.blocks - 1; b >= 0; --b) {
    gmap = ops::maxpool2_backward(tape.pool_argmax[static_cast<std::size_t>(b)],
                                  tape.pool_in_shape[static_cast<std::size_t>(b)], gmap);
    gmap = conv_relu_backward(std::move(gmap));
    gmap = conv_relu_backward(std::move(gmap));
  }
}

std::vector<NamedParam> ConvTrunk::params(const std::string& prefix) {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".w", &convs_[i].w});
    out.push_back({prefix + "conv" + std::to_string(i) + ".b", &convs_[i].b});
  }
  return out;
}

PatchNet::PatchNet(const PatchNetConfig& config, Rng& rng) : trunk_(config, rng) {
  head_w_ = init_dense_weights(1, trunk_.feature_count(), rng);
  head_b_ = Tensor({1});
}

double PatchNet::forward(const Tensor& patch) const {
  const Tensor feat = trunk_.features(patch);
  const Tensor logit = ops::dense(feat, head_w_, head_b_);
  return ops::sigmoid(logit.at(0));
}

double PatchNet::forward_train(const Tensor& patch, Rng& dropout_rng, Tape& tape) const {
  tape.features = trunk_.features_train(patch, dropout_rng, tape.trunk);
  const Tensor logit = ops::dense(tape.features, head_w_, head_b_);
  tape.prob = ops::sigmoid(logit.at(0));
  return tape.prob;
}

void PatchNet::backward(const Tape& tape, double dloss_dprob, std::vector<Tensor>& grads) const {
  const double dldz = dloss_dprob * tape.prob * (1.0 - tape.prob);
  Tensor gz({1}, {dldz});
  auto dg = ops::dense_backward(tape.features, head_w_, gz);
  const std::size_t head_at = trunk_.param_tensor_count();
  for (std::size_t i = 0; i < dg.weights.size(); ++i) grads[head_at][i] += dg.weights[i];
  grads[head_at + 1][0] += dg.bias[0];
  trunk_.backward(tape.trunk, dg.input, grads, 0);
}

std::vector<NamedParam> PatchNet::params() {
  auto out = trunk_.params("");
  out.push_back({"head.w", &head_w_});
  out.push_back({"head.b", &head_b_});
  return out;
}

std::vector<Tensor> PatchNet::zero_grads() const {
  std::vector<Tensor> grads;
  auto params = const_cast<PatchNet*>(this)->params();
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.value->shape());
  return grads;
}

void validate_fusionnet_config(const FusionNetConfig& c) {
  if (c.heatmap_side <= 0 || c.heatmap_channels <= 0)
    throw ConfigError("fusionnet config: heatmap geometry must be positive");
  if (c.dropout_rate < 0.0 || c.dropout_rate >= 1.0)
    throw ConfigError("fusionnet config: dropout rate must lie in [0,1)");
  validate_patchnet_config(c.image);
}

std::int64_t fusionnet_param_count(const FusionNetConfig& c) {
  std::int64_t total = static_cast<std::int64_t>(c.heatmap_channels) * 1 * 3 * 3 + c.heatmap_channels;
  // image trunk (patchnet count minus its dense head)
  const auto plan = channel_plan(c.image);
  int in_ch = 1;
  for (int out_ch : plan) {
    total += static_cast<std::int64_t>(out_ch) * in_ch * c.image.kernel * c.image.kernel + out_ch;
    in_ch = out_ch;
  }
  const std::int64_t fused = static_cast<std::int64_t>(c.heatmap_channels) * c.heatmap_side *
                                 c.heatmap_side + in_ch;
  total += fused + 1;  // fuse dense
  return total;
}

FusionNet::FusionNet(const FusionNetConfig& config, Rng& rng) : cfg_(config) {
  validate_fusionnet_config(config);
  hm_conv_.w = init_conv_weights(config.heatmap_channels, 1, 3, rng);
  hm_conv_.b = Tensor({config.heatmap_channels});
  hm_conv_.pad = 1;
  img_trunk_ = ConvTrunk(config.image, rng);
  const int fused = config.heatmap_channels * config.heatmap_side * config.heatmap_side +
                    img_trunk_.feature_count();
  fuse_w_ = init_dense_weights(1, fused, rng);
  fuse_b_ = Tensor({1});
}

double FusionNet::forward_impl(const Tensor& image, const Tensor& heatmap_bits, Rng* dropout_rng,
                               Tape* tape) const {
  if (heatmap_bits.rank() != 3 || heatmap_bits.dim(0) != 1 ||
      heatmap_bits.dim(1) != cfg_.heatmap_side || heatmap_bits.dim(2) != cfg_.heatmap_side)
    throw DimensionError("fusion: heatmap " + heatmap_bits.shape_str() +
                         " does not match configured side " + std::to_string(cfg_.heatmap_side));

  // heatmap branch
  if (tape) tape->hm_in = heatmap_bits;
  Tensor hm = ops::conv2d(heatmap_bits, hm_conv_.w, hm_conv_.b, 1, hm_conv_.pad);
  hm = ops::activation(hm, ops::Activation::relu);
  if (tape) tape->hm_relu = hm;
  if (dropout_rng) {
    auto hm_drop = ops::dropout(hm, cfg_.dropout_rate, *dropout_rng, true);
    if (tape) tape->hm_dropout_scale = hm_drop.scale;
    hm = std::move(hm_drop.output);
  }
  Tensor hm_flat({static_cast<int>(hm.size())},
                 std::vector<double>(hm.data(), hm.data() + hm.size()));
  if (tape) tape->hm_flat = hm_flat;

  // image branch
  Tensor img_feat;
  if (tape) {
    img_feat = img_trunk_.features_train(image, *dropout_rng, tape->trunk);
    tape->img_features = img_feat;
  } else {
    img_feat = img_trunk_.features(image);
  }

  // concatenate -> dense -> sigmoid
  Tensor fused({hm_flat.dim(0) + img_feat.dim(0)});
  for (int i = 0; i < hm_flat.dim(0); ++i) fused.at(i) = hm_flat.at(i);
  for (int i = 0; i < img_feat.dim(0); ++i) fused.at(hm_flat.dim(0) + i) = img_feat.at(i);
  if (tape) tape->fused = fused;
  const Tensor logit = ops::dense(fused, fuse_w_, fuse_b_);
  const double prob = ops::sigmoid(logit.at(0));
  if (tape) tape->prob = prob;
  return prob;
}

double FusionNet::forward(const Tensor& image, const Tensor& heatmap_bits) const {
  return forward_impl(image, heatmap_bits, nullptr, nullptr);
}

double FusionNet::forward_train(const Tensor& image, const Tensor& heatmap_bits, Rng& dropout_rng,
                                Tape& tape) const {
  return forward_impl(image, heatmap_bits, &dropout_rng, &tape);
}

void FusionNet::backward(const Tape& tape, double dloss_dprob, std::vector<Tensor>& grads) const {
  const double dldz = dloss_dprob * tape.prob * (1.0 - tape.prob);
  Tensor gz({1}, {dldz});
  auto dg = ops::dense_backward(tape.fused, fuse_w_, gz);

  // param order: hm_conv.w, hm_conv.b, trunk convs..., fuse.w, fuse.b
  const std::size_t trunk_at = 2;
  const std::size_t fuse_at = trunk_at + img_trunk_.param_tensor_count();
  for (std::size_t i = 0; i < dg.weights.size(); ++i) grads[fuse_at][i] += dg.weights[i];
  grads[fuse_at + 1][0] += dg.bias[0];

  const int hm_n = tape.hm_flat.dim(0);
  Tensor g_hm_flat({hm_n});
  for (int i = 0; i < hm_n; ++i) g_hm_flat.at(i) = dg.input.at(i);
  Tensor g_img({dg.input.dim(0) - hm_n});
  for (int i = 0; i < g_img.dim(0); ++i) g_img.at(i) = dg.input.at(hm_n + i);

  // image branch
  img_trunk_.backward(tape.trunk, g_img, grads, trunk_at);

  // heatmap branch: unflatten -> dropout -> relu -> conv
  Tensor g_hm(tape.hm_relu.shape());
  for (std::size_t i = 0; i < g_hm.size(); ++i) g_hm[i] = g_hm_flat[i];
  g_hm = ops::dropout_backward(tape.hm_dropout_scale, g_hm);
  g_hm = ops::activation_backward(tape.hm_relu, ops::Activation::relu, g_hm);
  auto cg = ops::conv2d_backward(tape.hm_in, hm_conv_.w, 1, hm_conv_.pad, g_hm);
  for (std::size_t i = 0; i < cg.weights.size(); ++i) grads[0][i] += cg.weights[i];
  for (std::size_t i = 0; i < cg.bias.size(); ++i) grads[1][i] += cg.bias[i];
}

std::vector<NamedParam> FusionNet::params() {
  std::vector<NamedParam> out;
  out.push_back({"hm_conv.w", &hm_conv_.w});
  out.push_back({"hm_conv.b", &hm_conv_.b});
  for (auto& p : img_trunk_.params("img.")) out.push_back(p);
  out.push_back({"fuse.w", &fuse_w_});
  out.push_back({"fuse.b", &fuse_b_});
  return out;
}

std::vector<Tensor> FusionNet::zero_grads() const {
  std::vector<Tensor> grads;
  auto params = const_cast<FusionNet*>(this)->params();
  grads.reserve(params.size());
  for (const auto& p : params) grads.emplace_back(p.value->shape());
  return grads;
}

void quantize_params_f32(std::vector<NamedParam> params) {
  for (auto& p : params)
    for (std::size_t i = 0; i < p.value->size(); ++i)
      (*p.value)[i] = static_cast<double>(static_cast<float>((*p.value)[i]));
}

Prediction predict(const Pipeline& pipeline, const ImageSample& sample) {
  const Tensor working = resize_area(sample.pixels, pipeline.grid.full_side);
  const auto scorer = [&](const Tensor& patch) { return pipeline.stage1.forward(patch); };
  Prediction out;
  out.heatmap = build_heatmap(scorer, working, pipeline.grid, pipeline.heatmap_threshold);
  const Tensor stage2_img = resize_area(working, pipeline.stage2.config().image.input_side);
  out.probability = pipeline.stage2.forward(stage2_img, out.heatmap.bits_tensor());
  out.diagnosis = out.probability >= pipeline.decision_threshold ? 1 : 0;
  return out;
}

}  // namespace pneumo
