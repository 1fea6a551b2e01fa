#pragma once

#include <functional>
#include <vector>

#include "handcraft/numcore/tensor.hpp"

namespace handcraft::numcore {

/// Compares reverse-mode gradients of a deterministic scalar-valued function
/// against central finite differences, element by element over every
/// parameter. Returns the worst relative error. `f` must rebuild its graph
/// from the current parameter values on each call (noise and dropout off).
Scalar grad_check(const std::function<Tensor()>& f, std::vector<Tensor>& params,
                  Scalar h = 1e-5);

}  // namespace handcraft::numcore
