#pragma once

#include <cstdint>

#include "pneumo/tensor.hpp"

namespace pneumo {

// Per-parameter Adam accumulator. m and v track the parameter shape.
struct AdamState {
  std::int64_t step = 0;
  Tensor m;
  Tensor v;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState make_adam_state(const Tensor& param);

// Standard Adam update with bias correction, in place. Increments the
// step counter. Zero gradients leave the parameter bit-identical.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr);

// Step decay: lr(epoch) = base_lr * gamma^floor(epoch / period_epochs).
struct LrSchedule {
  double base_lr = 1e-5;
  double gamma = 0.9;
  int period_epochs = 50;
};

double lr_at_epoch(const LrSchedule& schedule, int epoch);

}  // namespace pneumo
