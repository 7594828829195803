#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gcdt/numerics/tape.h"

namespace gcdt::num {

struct AdamWOptions {
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  /// Throws std::invalid_argument unless lr > 0, weight_decay >= 0,
  /// betas lie in [0, 1) and epsilon > 0.
  void validate() const;
};

/// Optimizer state. Moments are keyed by parameter name and carry their own
/// step count, so parameters that sit out some steps (other tasks' adapters)
/// get correct bias correction when they are next updated.
template <typename T>
struct AdamWState {
  struct Moments {
    std::vector<T> first;
    std::vector<T> second;
    std::uint64_t steps = 0;
  };

  AdamWOptions options;
  std::uint64_t step_count = 0;
  std::map<std::string, Moments> moments;
};

/// One decoupled-weight-decay Adam update:
///   theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
/// With `only_touched`, parameters whose `touched` flag is clear are left
/// alone entirely (no decay, no moment update). Throws before modifying
/// anything if a gradient is non-finite or shaped differently from its
/// parameter. `lr_scale` multiplies options.lr (schedule).
template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamWState<T>& state, bool only_touched = true,
                double lr_scale = 1.0);

/// Rescales gradients of touched parameters so their joint L2 norm is at
/// most `max_norm`. Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

}  // namespace gcdt::num
