#include "pneumo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "pneumo/error.hpp"

namespace pneumo {

double grad_check(const ForwardFn& forward, const AdjointFn& adjoint,
                  const std::vector<Tensor>& inputs, double eps, Rng& rng) {
  if (eps < 1e-7 || eps > 1e-3)
    throw ParameterError("grad_check: eps must lie in [1e-7, 1e-3]");

  const Tensor base_out = forward(inputs);
  Tensor summary_w(base_out.shape());
  for (std::size_t i = 0; i < summary_w.size(); ++i) summary_w[i] = rng.uniform(-1.0, 1.0);

  const auto summarize = [&](const Tensor& out) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * summary_w[i];
    return s;
  };

  const std::vector<Tensor> analytic = adjoint(inputs, summary_w);
  if (analytic.size() != inputs.size())
    throw DimensionError("grad_check: adjoint must return one gradient per input");

  double max_rel = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double saved = probe[t][i];
      probe[t][i] = saved + eps;
      const double plus = summarize(forward(probe));
      probe[t][i] = saved - eps;
      const double minus = summarize(forward(probe));
      probe[t][i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace pneumo
