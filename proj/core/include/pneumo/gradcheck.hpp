#pragma once

#include <functional>
#include <vector>

#include "pneumo/rng.hpp"
#include "pneumo/tensor.hpp"

namespace pneumo {

// Forward map from a tuple of inputs to one output tensor.
using ForwardFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Adjoint: given the same inputs and an upstream gradient with the output's
// shape, produce one gradient tensor per input (same shapes as the inputs).
using AdjointFn = std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)>;

// Compares the adjoint against central finite differences of a scalar
// summary of the forward output (a fixed random weighting of the output
// elements). Returns the maximum relative error over every input element.
// eps must lie in [1e-7, 1e-3].
double grad_check(const ForwardFn& forward, const AdjointFn& adjoint,
                  const std::vector<Tensor>& inputs, double eps, Rng& rng);

}  // namespace pneumo
