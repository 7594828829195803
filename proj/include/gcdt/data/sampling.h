#pragma once

#include <cstddef>
#include <vector>

#include "gcdt/data/trajectory.h"
#include "gcdt/numerics/rng.h"

namespace gcdt::data {

/// A suffix-aligned slice of one trajectory: timesteps [first, last]
/// (1-based, inclusive).
struct Window {
  const Trajectory* trajectory = nullptr;
  std::size_t first = 1;
  std::size_t last = 1;

  std::size_t length() const { return last - first + 1; }
  /// Absolute timestep of window position i (0-based).
  std::size_t timestep(std::size_t i) const { return first + i; }
  /// T - t + 1 relative to the full trajectory, per window position.
  std::vector<std::size_t> time_to_goal() const;
};

/// Draws windows from an immutable dataset. A window end is a uniformly
/// chosen timestep over all timesteps of all trajectories (equivalently:
/// a length-weighted trajectory, then an end index uniform in [1, T]).
class WindowSampler {
 public:
  /// Throws DatasetError on an empty dataset, std::invalid_argument on K == 0.
  WindowSampler(const Dataset& dataset, std::size_t max_timesteps);

  Window sample(num::Pcg32& rng) const;
  /// Window ending at `end` of trajectory `index`.
  Window window_at(std::size_t index, std::size_t end) const;

  std::size_t max_timesteps() const { return k_; }

 private:
  const Dataset* dataset_;
  std::size_t k_;
  std::vector<std::size_t> prefix_;  // prefix_[i] = timesteps before trajectory i
};

Window sample_window(const Dataset& d, num::Pcg32& rng, std::size_t max_timesteps);

}  // namespace gcdt::data
