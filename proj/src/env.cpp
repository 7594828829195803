#include "gcdt/env/env.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "gcdt/data/dataset_io.h"
#include "gcdt/numerics/rng.h"

namespace gcdt::env {

double distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

namespace {

Vec3 clamp_workspace(Vec3 p) {
  for (double& c : p) c = std::clamp(c, 0.0, 1.0);
  return p;
}

Vec3 uniform_point(num::Pcg32& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

Vec3 goal_away_from(num::Pcg32& rng, const Vec3& start) {
  for (;;) {
    const Vec3 g = uniform_point(rng, 0.1, 0.9);
    if (distance(g, start) >= kMinGoalSeparation) return g;
  }
}

Vec3 goal_slice(const std::vector<double>& goal, std::size_t arm) {
  return {goal[3 * arm], goal[3 * arm + 1], goal[3 * arm + 2]};
}

// Proportional command toward `target`, one step of kStepSize per unit.
void reach_command(const Vec3& from, const Vec3& target, double* out) {
  for (int i = 0; i < 3; ++i) out[i] = std::clamp((target[i] - from[i]) / kStepSize, -1.0, 1.0);
}

void append(std::vector<double>& v, const Vec3& p) { v.insert(v.end(), p.begin(), p.end()); }

// ---------------------------------------------------------------------------

class Reach3d final : public Environment {
 public:
  Reach3d() : Environment(env_task_spec("reach3d")) {}

  std::vector<double> expert_action() const override {
    std::vector<double> a(4, 1.0);
    reach_command(state_.arms[0].position, goal_slice(state_.goal, 0), a.data());
    return a;
  }

 protected:
  void sample_start(std::uint64_t seed) override {
    num::Pcg32 rng(seed);
    state_.arms = {Arm{uniform_point(rng, 0.1, 0.9), true}};
    state_.objects.clear();
    const Vec3 g = goal_away_from(rng, state_.arms[0].position);
    state_.goal.assign(g.begin(), g.end());
  }
  std::vector<double> observation() const override {
    std::vector<double> o;
    append(o, state_.arms[0].position);
    o.push_back(state_.arms[0].gripper_open ? 1.0 : 0.0);
    return o;
  }
  std::vector<double> achieved_goal() const override {
    const auto& p = state_.arms[0].position;
    return {p.begin(), p.end()};
  }
  double goal_error() const override { return distance(state_.arms[0].position, goal_slice(state_.goal, 0)); }
};

class BiReach3d final : public Environment {
 public:
  BiReach3d() : Environment(env_task_spec("bireach3d")) {}

  std::vector<double> expert_action() const override {
    std::vector<double> a(8, 1.0);
    reach_command(state_.arms[0].position, goal_slice(state_.goal, 0), a.data());
    reach_command(state_.arms[1].position, goal_slice(state_.goal, 1), a.data() + 4);
    return a;
  }

 protected:
  void sample_start(std::uint64_t seed) override {
    num::Pcg32 rng(seed);
    state_.arms = {Arm{uniform_point(rng, 0.1, 0.9), true}, Arm{uniform_point(rng, 0.1, 0.9), true}};
    state_.objects.clear();
    state_.goal.clear();
    for (const auto& arm : state_.arms) append(state_.goal, goal_away_from(rng, arm.position));
  }
  std::vector<double> observation() const override {
    std::vector<double> o;
    for (const auto& arm : state_.arms) {
      append(o, arm.position);
      o.push_back(arm.gripper_open ? 1.0 : 0.0);
    }
    return o;
  }
  std::vector<double> achieved_goal() const override {
    std::vector<double> g;
    for (const auto& arm : state_.arms) append(g, arm.position);
    return g;
  }
  double goal_error() const override {
    return std::max(distance(state_.arms[0].position, goal_slice(state_.goal, 0)),
                    distance(state_.arms[1].position, goal_slice(state_.goal, 1)));
  }
};

constexpr double kHoverHeight = 0.1;
constexpr double kAlignTolerance = 0.01;

class PickPlace3d final : public Environment {
 public:
  PickPlace3d() : Environment(env_task_spec("pickplace3d")) {}

  std::vector<double> expert_action() const override {
    const Vec3& ee = state_.arms[0].position;
    const Vec3& obj = state_.objects[0].position;
    const Vec3 goal = goal_slice(state_.goal, 0);
    std::vector<double> a(4, 0.0);
    switch (pickplace_phase(state_, spec_.success_threshold)) {
      case 1: {
        const Vec3 hover{obj[0], obj[1], std::min(obj[2] + kHoverHeight, 1.0)};
        reach_command(ee, hover, a.data());
        a[3] = 1.0;
        break;
      }
      case 2: {
        reach_command(ee, obj, a.data());
        Vec3 next = ee;
        for (int i = 0; i < 3; ++i) next[i] += kStepSize * a[i];
        a[3] = distance(clamp_workspace(next), obj) < kAttachRadius ? -1.0 : 1.0;
        break;
      }
      case 3:
        reach_command(ee, goal, a.data());
        a[3] = -1.0;
        break;
      default:
        a[3] = 1.0;
        break;
    }
    return a;
  }

 protected:
  void sample_start(std::uint64_t seed) override {
    num::Pcg32 rng(seed);
    state_.arms = {Arm{uniform_point(rng, 0.1, 0.9), true}};
    const Vec3 obj{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.8)};
    state_.objects = {Object{obj, -1}};
    const Vec3 g = goal_away_from(rng, obj);
    state_.goal.assign(g.begin(), g.end());
  }
  std::vector<double> observation() const override {
    const Vec3& ee = state_.arms[0].position;
    const Vec3& obj = state_.objects[0].position;
    std::vector<double> o;
    append(o, ee);
    o.push_back(state_.arms[0].gripper_open ? 1.0 : 0.0);
    append(o, obj);
    append(o, Vec3{obj[0] - ee[0], obj[1] - ee[1], obj[2] - ee[2]});
    return o;
  }
  std::vector<double> achieved_goal() const override {
    const auto& p = state_.objects[0].position;
    return {p.begin(), p.end()};
  }
  double goal_error() const override { return distance(state_.objects[0].position, goal_slice(state_.goal, 0)); }
};

}  // namespace

int pickplace_phase(const EnvState& state, double success_threshold) {
  const Vec3& ee = state.arms.at(0).position;
  const Object& obj = state.objects.at(0);
  if (obj.held_by == 0) {
    const Vec3 goal{state.goal[0], state.goal[1], state.goal[2]};
    return distance(obj.position, goal) < success_threshold ? 4 : 3;
  }
  const double horizontal = std::hypot(obj.position[0] - ee[0], obj.position[1] - ee[1]);
  return horizontal > kAlignTolerance ? 1 : 2;
}

// ---------------------------------------------------------------------------

void Environment::set_state(EnvState state) {
  for (auto& arm : state.arms) arm.position = clamp_workspace(arm.position);
  for (auto& obj : state.objects) obj.position = clamp_workspace(obj.position);
  state_ = std::move(state);
}

EnvObservation Environment::reset(std::uint64_t seed) {
  state_ = EnvState{};
  sample_start(seed);
  state_.step_count = 0;
  return observe();
}

EnvObservation Environment::step(const std::vector<double>& action) {
  if (action.size() != spec_.act_dim)
    throw std::invalid_argument(name() + ": action has " + std::to_string(action.size()) + " components, expected " +
                                std::to_string(spec_.act_dim));
  if (state_.step_count >= spec_.max_episode_steps)
    throw std::logic_error(name() + ": episode already took " + std::to_string(spec_.max_episode_steps) + " steps");
  bool clamped = false;
  std::vector<double> a(action.size());
  for (std::size_t i = 0; i < action.size(); ++i) {
    if (!std::isfinite(action[i])) throw std::invalid_argument(name() + ": non-finite action component");
    a[i] = std::clamp(action[i], -1.0, 1.0);
    clamped = clamped || a[i] != action[i];
  }

  for (std::size_t k = 0; k < state_.arms.size(); ++k) {
    Arm& arm = state_.arms[k];
    const double* cmd = a.data() + 4 * k;
    for (int i = 0; i < 3; ++i) arm.position[i] += kStepSize * cmd[i];
    arm.position = clamp_workspace(arm.position);
    for (auto& obj : state_.objects)
      if (obj.held_by == static_cast<int>(k)) obj.position = arm.position;

    if (cmd[3] < 0.0) {
      arm.gripper_open = false;
      for (auto& obj : state_.objects) {
        if (obj.held_by < 0 && distance(obj.position, arm.position) < kAttachRadius) {
          obj.held_by = static_cast<int>(k);
          obj.position = arm.position;
          break;
        }
      }
    } else {
      arm.gripper_open = true;
      for (auto& obj : state_.objects)
        if (obj.held_by == static_cast<int>(k)) obj.held_by = -1;
    }
  }
  ++state_.step_count;
  EnvObservation o = observe();
  o.action_clamped = clamped;
  return o;
}

EnvObservation Environment::observe() const {
  EnvObservation o;
  o.observation = observation();
  o.achieved_goal = achieved_goal();
  o.goal = state_.goal;
  o.success = success();
  return o;
}

bool Environment::success() const { return goal_error() < spec_.success_threshold; }

// ---------------------------------------------------------------------------

std::vector<std::string> env_names() { return {"reach3d", "pickplace3d", "bireach3d"}; }

data::TaskSpec env_task_spec(const std::string& name) {
  data::TaskSpec s;
  s.task_id = name;
  s.success_threshold = kSuccessThreshold;
  if (name == "reach3d") {
    s.obs_dim = 4, s.goal_dim = 3, s.act_dim = 4, s.max_episode_steps = 50;
  } else if (name == "pickplace3d") {
    s.obs_dim = 10, s.goal_dim = 3, s.act_dim = 4, s.max_episode_steps = 60;
  } else if (name == "bireach3d") {
    s.obs_dim = 8, s.goal_dim = 6, s.act_dim = 8, s.max_episode_steps = 50;
  } else {
    throw std::invalid_argument("unknown environment '" + name + "' (known: reach3d, pickplace3d, bireach3d)");
  }
  s.expected_steps = s.max_episode_steps / 2;
  return s;
}

std::unique_ptr<Environment> make_env(const std::string& name, std::uint64_t seed) {
  std::unique_ptr<Environment> env;
  if (name == "reach3d") env = std::make_unique<Reach3d>();
  else if (name == "pickplace3d") env = std::make_unique<PickPlace3d>();
  else if (name == "bireach3d") env = std::make_unique<BiReach3d>();
  else throw std::invalid_argument("unknown environment '" + name + "' (known: reach3d, pickplace3d, bireach3d)");
  env->reset(seed);
  return env;
}

Demos collect_demos(const std::string& env_name, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("collect_demos: episodes must be >= 1");
  auto env = make_env(env_name, seed);
  Demos out;
  out.spec = env->spec();
  std::size_t total_len = 0;
  for (std::size_t i = 0; i < episodes; ++i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      EnvObservation o = env->reset(num::mix_seed(seed, i) + attempt);
      data::Trajectory tr;
      tr.task_id = env_name;
      tr.goal = o.goal;
      while (!o.success && env->state().step_count < out.spec.max_episode_steps) {
        const auto a = env->expert_action();
        tr.observations.push_back(o.observation);
        tr.actions.push_back(a);
        o = env->step(a);
        tr.achieved_goals.push_back(o.achieved_goal);
      }
      if (o.success && tr.length() > 0) {
        total_len += tr.length();
        out.report.min_length = out.report.written == 0 ? tr.length() : std::min(out.report.min_length, tr.length());
        out.report.max_length = std::max(out.report.max_length, tr.length());
        ++out.report.written;
        out.dataset.trajectories.push_back(std::move(tr));
        break;
      }
      ++out.report.redrawn;
    }
  }
  out.report.mean_length = static_cast<double>(total_len) / static_cast<double>(episodes);
  out.spec.expected_steps = std::min<std::size_t>(
      out.spec.max_episode_steps, static_cast<std::size_t>(std::ceil(out.report.mean_length)));
  return out;
}

DemoReport generate_demos(const std::string& env_name, std::size_t episodes, std::uint64_t seed,
                          const std::filesystem::path& out_path) {
  Demos demos = collect_demos(env_name, episodes, seed);
  data::save_dataset(out_path, demos.dataset, data::TaskRegistry{{env_name, demos.spec}});
  return demos.report;
}

}  // namespace gcdt::env
