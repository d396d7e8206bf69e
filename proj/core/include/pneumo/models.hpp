#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pneumo/dataset.hpp"
#include "pneumo/ops.hpp"
#include "pneumo/patching.hpp"
#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

// Conv-stack configuration. The block pattern is two 3x3 convolutions
// followed by a max pool, with channel width doubling per block up to
// channel_cap; extra_conv appends one more convolution after the blocks,
// which is what makes the 6-block configuration a 13-conv-layer network.
struct PatchNetConfig {
  int input_side = 256;
  int base_channels = 8;  // 8 at desk scale, 32 at full scale
  int blocks = 6;
  bool extra_conv = true;
  double dropout_rate = 0.5;
  int kernel = 3;
  int channel_cap = 256;
};

void validate_patchnet_config(const PatchNetConfig& config);
int conv_layer_count(const PatchNetConfig& config);
// Output channels of every conv layer in order.
std::vector<int> channel_plan(const PatchNetConfig& config);
// Closed-form total parameter count (conv weights+biases, dense head).
std::int64_t patchnet_param_count(const PatchNetConfig& config);

struct NamedParam {
  std::string name;
  Tensor* value;
};

struct ConvLayer {
  Tensor w;  // out x in x k x k
  Tensor b;  // out
  int pad = 1;
};

// Shared conv feature extractor: blocks of (conv, relu, conv, relu, pool),
// optional extra conv+relu, global average pool, dropout. Produces a
// flat feature vector of the last conv width.
class ConvTrunk {
 public:
  ConvTrunk() = default;
  ConvTrunk(const PatchNetConfig& config, Rng& rng);

  const PatchNetConfig& config() const { return cfg_; }
  int feature_count() const;

  // Inference path: deterministic, dropout disabled.
  Tensor features(const Tensor& image) const;

  struct Tape {
    std::vector<Tensor> conv_in;    // input of each conv layer
    std::vector<Tensor> relu_out;   // output of each conv's relu
    std::vector<std::vector<std::int32_t>> pool_argmax;
    std::vector<std::vector<int>> pool_in_shape;
    std::vector<int> gap_spatial;   // H,W entering global average pool
    std::vector<double> dropout_scale;
  };
  Tensor features_train(const Tensor& image, Rng& dropout_rng, Tape& tape) const;

  // Accumulates parameter gradients (aligned with params() order) and
  // returns nothing the callers need beyond that; the image gradient is
  // not propagated (inputs are data).
  void backward(const Tape& tape, const Tensor& grad_features, std::vector<Tensor>& grads,
                std::size_t grad_offset) const;

  std::vector<NamedParam> params(const std::string& prefix);
  std::size_t param_tensor_count() const { return convs_.size() * 2; }

 private:
  Tensor forward_impl(const Tensor& image, Rng* dropout_rng, Tape* tape) const;

  PatchNetConfig cfg_;
  std::vector<ConvLayer> convs_;
};

// Stage-1 patch classifier: trunk + dense head + sigmoid.
class PatchNet {
 public:
  PatchNet() = default;
  PatchNet(const PatchNetConfig& config, Rng& rng);

  const PatchNetConfig& config() const { return trunk_.config(); }

  double forward(const Tensor& patch) const;

  struct Tape {
    ConvTrunk::Tape trunk;
    Tensor features;
    double prob = 0.0;
  };
  double forward_train(const Tensor& patch, Rng& dropout_rng, Tape& tape) const;
  // dloss_dprob is dL/dp at the sigmoid output.
  void backward(const Tape& tape, double dloss_dprob, std::vector<Tensor>& grads) const;

  std::vector<NamedParam> params();
  std::vector<Tensor> zero_grads() const;

  ConvTrunk& trunk() { return trunk_; }
  const ConvTrunk& trunk() const { return trunk_; }
  Tensor& head_w() { return head_w_; }
  Tensor& head_b() { return head_b_; }

 private:
  ConvTrunk trunk_;
  Tensor head_w_;  // 1 x features
  Tensor head_b_;  // 1
};

// Stage-2 fusion classifier. The binary heatmap passes through one conv
// layer + dropout and is flattened; the downscaled image passes through a
// trunk of the same family; one dense layer over the concatenation learns
// the weighting between the two paths.
struct FusionNetConfig {
  int heatmap_side = 17;
  int heatmap_channels = 8;
  PatchNetConfig image;  // input_side 256 at paper scale, 32 at desk scale
  double dropout_rate = 0.5;
};

void validate_fusionnet_config(const FusionNetConfig& config);
std::int64_t fusionnet_param_count(const FusionNetConfig& config);

class FusionNet {
 public:
  FusionNet() = default;
  FusionNet(const FusionNetConfig& config, Rng& rng);

  const FusionNetConfig& config() const { return cfg_; }

  double forward(const Tensor& image, const Tensor& heatmap_bits) const;

  struct Tape {
    Tensor hm_in;
    Tensor hm_relu;
    std::vector<double> hm_dropout_scale;
    Tensor hm_flat;
    ConvTrunk::Tape trunk;
    Tensor img_features;
    Tensor fused;  // concatenated vector entering the dense layer
    double prob = 0.0;
  };
  double forward_train(const Tensor& image, const Tensor& heatmap_bits, Rng& dropout_rng,
                       Tape& tape) const;
  void backward(const Tape& tape, double dloss_dprob, std::vector<Tensor>& grads) const;

  std::vector<NamedParam> params();
  std::vector<Tensor> zero_grads() const;

 private:
  double forward_impl(const Tensor& image, const Tensor& heatmap_bits, Rng* dropout_rng,
                      Tape* tape) const;

  FusionNetConfig cfg_;
  ConvLayer hm_conv_;
  ConvTrunk img_trunk_;
  Tensor fuse_w_;
  Tensor fuse_b_;
};

// Casts every parameter through 32-bit floats, so the in-memory model is
// exactly what a checkpoint round-trip reproduces.
void quantize_params_f32(std::vector<NamedParam> params);

// Full two-stage pipeline.
struct Pipeline {
  PatchNet stage1;
  FusionNet stage2;
  WindowGrid grid;
  double heatmap_threshold = 0.5;
  double decision_threshold = 0.5;
};

struct Prediction {
  double probability = 0.0;
  int diagnosis = 0;
  Heatmap heatmap;
};

// resize to the working side -> stage-1 sliding-window heatmap -> resize
// to the stage-2 input side -> fusion forward. diagnosis = prob >= 0.5.
Prediction predict(const Pipeline& pipeline, const ImageSample& sample);

}  // namespace pneumo
