#include "handcraft/numcore/schedule.hpp"

#include <cmath>
#include <numbers>

namespace handcraft::numcore {

std::int64_t OneCycleSchedule::warmup_end() const {
  // Nudge guards against 0.1 * 400 ceiling to 41.
  return static_cast<std::int64_t>(
      std::ceil(warmup_ratio * static_cast<Scalar>(total_steps) - 1e-9));
}

OneCycleSchedule make_onecycle(Scalar peak_lr, std::int64_t total_steps,
                               Scalar warmup_ratio) {
  if (total_steps < 1) throw ConfigError("onecycle total_steps must be >= 1");
  if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0))
    throw ConfigError("onecycle warmup_ratio must be in (0, 1)");
  if (peak_lr <= 0.0) throw ConfigError("onecycle peak_lr must be positive");
  OneCycleSchedule sched;
  sched.peak_lr = peak_lr;
  sched.total_steps = total_steps;
  sched.warmup_ratio = warmup_ratio;
  if (sched.warmup_end() >= total_steps)
    throw ConfigError("onecycle warmup covers the whole run");
  return sched;
}

Scalar onecycle_lr(const OneCycleSchedule& sched, std::int64_t step) {
  if (step < 0 || step > sched.total_steps)
    throw RangeError("onecycle step " + std::to_string(step) + " outside [0, " +
                     std::to_string(sched.total_steps) + "]");
  const Scalar pi = std::numbers::pi_v<Scalar>;
  const std::int64_t w = sched.warmup_end();
  const Scalar initial = sched.peak_lr / sched.initial_div;
  const Scalar final_lr = sched.peak_lr / sched.final_div;
  if (step <= w) {
    const Scalar s = static_cast<Scalar>(step) / static_cast<Scalar>(w);
    return initial + (sched.peak_lr - initial) * 0.5 * (1.0 - std::cos(pi * s));
  }
  const Scalar s = static_cast<Scalar>(step - w) /
                   static_cast<Scalar>(sched.total_steps - w);
  return final_lr + (sched.peak_lr - final_lr) * 0.5 * (1.0 + std::cos(pi * s));
}

}  // namespace handcraft::numcore
