#pragma once

#include <cstdint>
#include <vector>

#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"

// The five layer kinds the networks need, plus binary cross-entropy.
// Each forward op has an explicit adjoint producing gradients for every
// differentiable argument.
namespace pneumo::ops {

// input C_in x H x W, weights C_out x C_in x k x k, bias C_out.
// Output extent per axis: floor((in + 2*pad - k) / stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int pad);

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int pad,
                          const Tensor& grad_out);

// Non-overlapping 2x2 max pooling; H and W must be even.
struct MaxPool2Out {
  Tensor output;
  std::vector<std::int32_t> argmax;  // flat input index per output element
};
MaxPool2Out maxpool2(const Tensor& input);
// Gradient routed to the argmax position (first occurrence, row-major).
Tensor maxpool2_backward(const std::vector<std::int32_t>& argmax,
                         const std::vector<int>& input_shape, const Tensor& grad_out);

// y = W x + b with W m x n, x n, b m.
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

enum class Activation { relu, sigmoid };

double sigmoid(double z);

Tensor activation(const Tensor& input, Activation kind);
// Adjoint in terms of the forward output: relu' = [out > 0],
// sigmoid' = out * (1 - out).
Tensor activation_backward(const Tensor& output, Activation kind, const Tensor& grad_out);

// Inverted dropout: in training mode each element is zeroed with
// probability `rate` and survivors are scaled by 1/(1-rate); inference
// mode is the identity. rate must lie in [0,1).
struct DropoutOut {
  Tensor output;
  std::vector<double> scale;  // per-element factor: 0 or 1/(1-rate); empty => identity
};
DropoutOut dropout(const Tensor& input, double rate, Rng& rng, bool training);
Tensor dropout_backward(const std::vector<double>& scale, const Tensor& grad_out);

// Binary cross-entropy on a single probability. p is clamped to
// [eps, 1-eps] with eps = 1e-7 before evaluation; the gradient is taken
// at the clamped value.
inline constexpr double kBceEps = 1e-7;

struct BceOut {
  double loss;
  double dloss_dp;
};
BceOut bce_loss(double p, int y);

}  // namespace pneumo::ops
