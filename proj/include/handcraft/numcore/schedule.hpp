#pragma once

#include <cstdint>

#include "handcraft/common.hpp"

namespace handcraft::numcore {

/// One-cycle learning rate: cosine ramp from peak/initial_div up to peak over
/// the warmup segment, cosine anneal down to peak/final_div afterward.
struct OneCycleSchedule {
  Scalar peak_lr = 1e-3;
  std::int64_t total_steps = 1;
  Scalar warmup_ratio = 0.3;
  Scalar initial_div = 25.0;
  Scalar final_div = 1e4;

  std::int64_t warmup_end() const;
};

OneCycleSchedule make_onecycle(Scalar peak_lr, std::int64_t total_steps,
                               Scalar warmup_ratio);

// Defined for 0 <= step <= total_steps; RangeError outside.
Scalar onecycle_lr(const OneCycleSchedule& sched, std::int64_t step);

}  // namespace handcraft::numcore
