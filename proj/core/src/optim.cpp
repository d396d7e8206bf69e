#include "pneumo/optim.hpp"

#include <cmath>

namespace pneumo {

AdamState make_adam_state(const Tensor& param) {
  AdamState s;
  s.m = Tensor(param.shape());
  s.v = Tensor(param.shape());
  return s;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, double lr) {
  if (!param.same_shape(grad) || !param.same_shape(state.m))
    throw DimensionError("adam_step: parameter/gradient/state shape mismatch");
  if (lr <= 0.0) throw ParameterError("adam_step: lr must be positive");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ParameterError("lr_at_epoch: epoch must be >= 0");
  if (schedule.base_lr <= 0.0 || schedule.gamma <= 0.0 || schedule.gamma > 1.0 ||
      schedule.period_epochs <= 0)
    throw ParameterError("lr_at_epoch: invalid schedule");
  const int k = epoch / schedule.period_epochs;
  return schedule.base_lr * std::pow(schedule.gamma, static_cast<double>(k));
}

}  // namespace pneumo
