#pragma once

#include <cstdint>
#include <vector>

#include "handcraft/numcore/tensor.hpp"

namespace handcraft::numcore {

enum class OptimizerKind { kAdam, kRAdam };

/// Per-parameter first/second moments plus the shared step counter.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  std::int64_t step_count = 0;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
  Scalar weight_decay = 0.0;
  std::vector<std::vector<Scalar>> first_moment;
  std::vector<std::vector<Scalar>> second_moment;
};

OptimizerState make_optimizer_state(OptimizerKind kind,
                                    const std::vector<Tensor>& params,
                                    Scalar weight_decay = 0.0,
                                    Scalar beta1 = 0.9, Scalar beta2 = 0.999,
                                    Scalar eps = 1e-8);

/// One update over `params`, reading each parameter's accumulated grad.
/// Weight decay is decoupled and applied before the adaptive step. RAdam
/// rectifies the second moment and falls back to plain momentum while the
/// variance estimate is untractable. Throws NonFiniteError on any non-finite
/// gradient entry.
void optimizer_step(OptimizerState& state, std::vector<Tensor>& params,
                    Scalar lr);

void zero_grads(std::vector<Tensor>& params);

}  // namespace handcraft::numcore
