#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gcdt/data/trajectory.h"

namespace gcdt::env {

using Vec3 = std::array<double, 3>;

inline constexpr double kStepSize = 0.05;
inline constexpr double kAttachRadius = 0.03;
inline constexpr double kSuccessThreshold = 0.02;
inline constexpr double kMinGoalSeparation = 0.2;

double distance(const Vec3& a, const Vec3& b);

struct Arm {
  Vec3 position{};
  bool gripper_open = true;
};

struct Object {
  Vec3 position{};
  /// Index of the holding arm, or -1.
  int held_by = -1;
};

struct EnvState {
  std::vector<Arm> arms;
  std::vector<Object> objects;
  std::vector<double> goal;
  std::size_t step_count = 0;
};

struct EnvObservation {
  std::vector<double> observation;
  std::vector<double> achieved_goal;
  std::vector<double> goal;
  bool success = false;
  /// Set by step() when an action component was outside [-1, 1].
  bool action_clamped = false;
};

/// A deterministic goal-conditioned kinematic task in the unit workspace.
/// Each arm moves by kStepSize times its three action components per step;
/// the fourth component commands the gripper (< 0 closes, >= 0 opens).
class Environment {
 public:
  virtual ~Environment() = default;

  const data::TaskSpec& spec() const { return spec_; }
  const std::string& name() const { return spec_.task_id; }
  const EnvState& state() const { return state_; }
  /// Replaces the state wholesale; positions are clamped into the workspace.
  void set_state(EnvState state);

  /// Draws start positions and a goal from `seed`.
  EnvObservation reset(std::uint64_t seed);
  /// Throws std::invalid_argument on a wrong action length or non-finite
  /// component, std::logic_error once max_episode_steps were taken.
  EnvObservation step(const std::vector<double>& action);
  EnvObservation observe() const;
  bool success() const;

  /// Scripted controller with full state access.
  virtual std::vector<double> expert_action() const = 0;

 protected:
  explicit Environment(data::TaskSpec spec) : spec_(std::move(spec)) {}

  virtual void sample_start(std::uint64_t seed) = 0;
  virtual std::vector<double> observation() const = 0;
  virtual std::vector<double> achieved_goal() const = 0;
  virtual double goal_error() const = 0;

  data::TaskSpec spec_;
  EnvState state_;
};

/// Known names: reach3d, pickplace3d, bireach3d. Throws
/// std::invalid_argument otherwise. The returned environment is already
/// reset with `seed`.
std::unique_ptr<Environment> make_env(const std::string& name, std::uint64_t seed = 0);
std::vector<std::string> env_names();
/// Built-in TaskSpec of a named environment (expected_steps set to half
/// the episode limit until demonstrations provide a better value).
data::TaskSpec env_task_spec(const std::string& name);

/// Phase the pick-and-place expert is in for the current state:
/// 1 approach above object, 2 descend and close, 3 carry, 4 release.
int pickplace_phase(const EnvState& state, double success_threshold);

struct DemoReport {
  std::size_t written = 0;
  /// Expert episodes that failed and were re-drawn.
  std::size_t redrawn = 0;
  double mean_length = 0.0;
  std::size_t min_length = 0;
  std::size_t max_length = 0;
};

struct Demos {
  data::Dataset dataset;
  /// Environment spec with expected_steps = ceil(mean demo length).
  data::TaskSpec spec;
  DemoReport report;
};

/// Rolls the expert for `episodes` successful episodes. Episode i starts
/// from reset seed mix_seed(seed, i) + attempt, where attempt counts the
/// failed tries of that episode.
Demos collect_demos(const std::string& env_name, std::size_t episodes, std::uint64_t seed);
/// collect_demos, then writes the JSON-Lines file and its task sidecar.
DemoReport generate_demos(const std::string& env_name, std::size_t episodes, std::uint64_t seed,
                          const std::filesystem::path& out_path);

}  // namespace gcdt::env
