#include "gcdt/data/sampling.h"

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>

namespace gcdt::data {

std::vector<std::size_t> Window::time_to_goal() const {
  std::vector<std::size_t> out;
  out.reserve(length());
  for (std::size_t t = first; t <= last; ++t) out.push_back(trajectory->time_to_goal(t));
  return out;
}

WindowSampler::WindowSampler(const Dataset& dataset, std::size_t max_timesteps)
    : dataset_(&dataset), k_(max_timesteps) {
  if (dataset.empty()) throw DatasetError("cannot sample windows from an empty dataset");
  if (max_timesteps == 0) throw std::invalid_argument("window length K must be >= 1");
  prefix_.reserve(dataset.size() + 1);
  std::size_t total = 0;
  for (const auto& tr : dataset.trajectories) {
    prefix_.push_back(total);
    total += tr.length();
  }
  prefix_.push_back(total);
  if (total > std::numeric_limits<std::uint32_t>::max())
    throw DatasetError("dataset too large for window sampling");
}

Window WindowSampler::sample(num::Pcg32& rng) const {
  const auto u = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint32_t>(prefix_.back())));
  const auto it = std::upper_bound(prefix_.begin(), prefix_.end(), u);
  const auto index = static_cast<std::size_t>(it - prefix_.begin()) - 1;
  return window_at(index, u - prefix_[index] + 1);
}

Window WindowSampler::window_at(std::size_t index, std::size_t end) const {
  const Trajectory& tr = dataset_->trajectories.at(index);
  if (end < 1 || end > tr.length())
    throw std::out_of_range("window end " + std::to_string(end) + " outside [1, " + std::to_string(tr.length()) + "]");
  Window w;
  w.trajectory = &tr;
  w.last = end;
  w.first = end - std::min(k_, end) + 1;
  return w;
}

Window sample_window(const Dataset& d, num::Pcg32& rng, std::size_t max_timesteps) {
  return WindowSampler(d, max_timesteps).sample(rng);
}

}  // namespace gcdt::data
