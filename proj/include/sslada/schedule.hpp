#pragma once

#include <cstddef>

namespace sslada {

/// One-cycle learning-rate schedule: linear warmup from
/// `max_lr * initial_lr_fraction` to `max_lr` over the first
/// `warmup_fraction * total_steps` steps, then cosine annealing down to
/// `max_lr * final_lr_fraction` at `total_steps`.
struct OneCycleSchedule {
  double max_lr = 1e-3;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.3;
  double final_lr_fraction = 1e-2;
  double initial_lr_fraction = 0.04;

  /// Throws ArgumentError on invalid fields.
  void validate() const;
  /// Learning rate at `step` in [0, total_steps]; throws ArgumentError
  /// outside that range.
  double lr(std::size_t step) const;
  /// lr(step) / max_lr, used to drive optimizer groups with their own base rates.
  double factor(std::size_t step) const;
  double peak_step() const;
};

/// Learning rate at `step` of `s` (free-function form).
double onecycle_lr(const OneCycleSchedule& s, std::size_t step);

}  // namespace sslada
