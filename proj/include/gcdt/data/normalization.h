#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcdt/data/trajectory.h"

namespace gcdt::data {

inline constexpr double kMinStd = 1e-6;

/// Affine standardization for one vector-valued item.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::vector<double> normalize(const std::vector<double>& x) const;
  std::vector<double> denormalize(const std::vector<double>& z) const;

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

struct TaskNormStats {
  Standardizer obs;
  Standardizer goal;
  Standardizer act;
  /// Time-to-goal values are divided by this (the task's max episode steps).
  double time_to_goal_scale = 1.0;

  friend bool operator==(const TaskNormStats&, const TaskNormStats&) = default;
};

using NormStats = std::map<std::string, TaskNormStats>;

/// Per-task population mean and std over every timestep of every
/// trajectory (the goal counts once per timestep). Std floored at kMinStd.
/// Throws DatasetError on an empty dataset or a task missing from `tasks`.
NormStats compute_norm_stats(const Dataset& d, const TaskRegistry& tasks);

}  // namespace gcdt::data
