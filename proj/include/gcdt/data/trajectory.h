#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace gcdt::data {

/// Dimensional and episodic metadata for one task.
struct TaskSpec {
  std::string task_id;
  std::size_t obs_dim = 0;
  std::size_t goal_dim = 0;
  std::size_t act_dim = 0;
  std::size_t max_episode_steps = 0;
  /// Expected overall episode length; drives the evaluation-time
  /// time-to-goal estimate.
  std::size_t expected_steps = 0;
  double success_threshold = 0.02;

  /// Throws std::invalid_argument on zero dims or expected > max steps.
  void validate() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

using TaskRegistry = std::map<std::string, TaskSpec>;

enum class Provenance { kOriginal, kRelabeled };

const char* to_string(Provenance p);

using Rows = std::vector<std::vector<double>>;

/// One demonstration episode. Row t-1 of each per-timestep array holds
/// timestep t (timesteps are 1-based throughout the toolkit).
///
/// achieved_goals[t-1] is the achieved goal in the state *after* actions[t-1]
/// was executed, so the final row is where the episode ended.
struct Trajectory {
  std::string task_id;
  Rows observations;
  Rows actions;
  std::vector<double> goal;
  Rows achieved_goals;
  Provenance provenance = Provenance::kOriginal;

  std::size_t length() const { return observations.size(); }

  /// Actions remaining until the end of the episode, inclusive of the
  /// current one: T - t + 1 for 1-based t.
  std::size_t time_to_goal(std::size_t t) const;

  /// Throws DatasetError describing the first violated invariant.
  void validate(const TaskSpec& spec) const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;

  std::size_t size() const { return trajectories.size(); }
  bool empty() const { return trajectories.empty(); }
  std::size_t count(Provenance p) const;
  std::size_t total_timesteps() const;
  /// Trajectories of one task, copied.
  Dataset filter_task(const std::string& task_id) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gcdt::data
