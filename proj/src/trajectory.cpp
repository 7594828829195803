#include "gcdt/data/trajectory.h"

#include <string>

namespace gcdt::data {

void TaskSpec::validate() const {
  if (task_id.empty()) throw std::invalid_argument("task spec: empty task id");
  if (obs_dim == 0 || goal_dim == 0 || act_dim == 0)
    throw std::invalid_argument("task spec '" + task_id + "': dimensions must be >= 1");
  if (max_episode_steps == 0) throw std::invalid_argument("task spec '" + task_id + "': max_episode_steps must be >= 1");
  if (expected_steps == 0 || expected_steps > max_episode_steps)
    throw std::invalid_argument("task spec '" + task_id + "': expected_steps " + std::to_string(expected_steps) +
                                " must lie in [1, " + std::to_string(max_episode_steps) + "]");
  if (!(success_threshold > 0.0)) throw std::invalid_argument("task spec '" + task_id + "': success_threshold must be > 0");
}

const char* to_string(Provenance p) {
  return p == Provenance::kOriginal ? "original" : "relabeled";
}

std::size_t Trajectory::time_to_goal(std::size_t t) const {
  if (t < 1 || t > length())
    throw std::out_of_range("time_to_goal: timestep " + std::to_string(t) + " outside [1, " +
                            std::to_string(length()) + "]");
  return length() - t + 1;
}

namespace {
void check_rows(const Rows& rows, std::size_t expected_len, std::size_t dim, const char* what) {
  if (rows.size() != expected_len)
    throw DatasetError(std::string(what) + " has " + std::to_string(rows.size()) + " rows, expected " +
                       std::to_string(expected_len));
  for (std::size_t t = 0; t < rows.size(); ++t)
    if (rows[t].size() != dim)
      throw DatasetError(std::string(what) + " row " + std::to_string(t + 1) + " has dimension " +
                         std::to_string(rows[t].size()) + ", task expects " + std::to_string(dim));
}
}  // namespace

void Trajectory::validate(const TaskSpec& spec) const {
  if (task_id != spec.task_id) throw DatasetError("trajectory task '" + task_id + "' checked against '" + spec.task_id + "'");
  const std::size_t len = length();
  if (len == 0) throw DatasetError("trajectory has no timesteps");
  check_rows(observations, len, spec.obs_dim, "obs");
  check_rows(actions, len, spec.act_dim, "act");
  check_rows(achieved_goals, len, spec.goal_dim, "achieved");
  if (goal.size() != spec.goal_dim)
    throw DatasetError("goal has dimension " + std::to_string(goal.size()) + ", task expects " +
                       std::to_string(spec.goal_dim));
  for (std::size_t t = 0; t < len; ++t)
    for (double a : actions[t])
      if (!(a >= -1.0 && a <= 1.0))
        throw DatasetError("act row " + std::to_string(t + 1) + " has component " + std::to_string(a) +
                           " outside [-1, 1]");
}

std::size_t Dataset::count(Provenance p) const {
  std::size_t n = 0;
  for (const auto& tr : trajectories) n += tr.provenance == p ? 1 : 0;
  return n;
}

std::size_t Dataset::total_timesteps() const {
  std::size_t n = 0;
  for (const auto& tr : trajectories) n += tr.length();
  return n;
}

Dataset Dataset::filter_task(const std::string& task_id) const {
  Dataset out;
  for (const auto& tr : trajectories)
    if (tr.task_id == task_id) out.trajectories.push_back(tr);
  return out;
}

}  // namespace gcdt::data
