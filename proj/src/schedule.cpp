#include "sslada/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "sslada/error.hpp"

namespace sslada {

void OneCycleSchedule::validate() const {
  if (!(max_lr > 0.0)) throw ArgumentError("one-cycle: max_lr must be positive");
  if (total_steps == 0) throw ArgumentError("one-cycle: total_steps must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw ArgumentError("one-cycle: warmup_fraction must lie in (0, 1)");
  }
  if (!(final_lr_fraction > 0.0 && final_lr_fraction < 1.0)) {
    throw ArgumentError("one-cycle: final_lr_fraction must lie in (0, 1)");
  }
  if (!(initial_lr_fraction > 0.0 && initial_lr_fraction < 1.0)) {
    throw ArgumentError("one-cycle: initial_lr_fraction must lie in (0, 1)");
  }
}

double OneCycleSchedule::peak_step() const {
  return warmup_fraction * static_cast<double>(total_steps);
}

double OneCycleSchedule::lr(std::size_t step) const {
  validate();
  if (step > total_steps) {
    throw ArgumentError("one-cycle: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  }
  const double t = static_cast<double>(step);
  const double peak = peak_step();
  const double start = max_lr * initial_lr_fraction;
  const double end = max_lr * final_lr_fraction;
  if (t <= peak) return start + (max_lr - start) * (t / peak);
  const double progress = (t - peak) / (static_cast<double>(total_steps) - peak);
  if (progress >= 1.0) return end;
  return end + (max_lr - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double OneCycleSchedule::factor(std::size_t step) const { return lr(step) / max_lr; }

double onecycle_lr(const OneCycleSchedule& s, std::size_t step) { return s.lr(step); }

}  // namespace sslada
