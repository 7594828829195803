#pragma once

#include "gcdt/data/trajectory.h"

namespace gcdt::data {

/// Hindsight relabeling. For every original trajectory of length T and
/// every truncation point t in 1..T, emits the first t steps with the goal
/// replaced by achieved_goals[t]. Returns the originals followed by all
/// relabeled instances (grouped per source trajectory, in increasing t),
/// so the output holds N + sum(T_i) trajectories.
///
/// Throws DatasetError if `d` already contains relabeled trajectories.
Dataset hindsight_relabel(const Dataset& d);

}  // namespace gcdt::data
