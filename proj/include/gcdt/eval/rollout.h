#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gcdt/env/env.h"
#include "gcdt/model/model.h"

namespace gcdt::eval {

/// Delay rule: max(expected_steps - t + 1, 1) actions remain at timestep t.
/// Throws std::invalid_argument for t < 1.
std::size_t estimate_time_to_goal(std::size_t t, std::size_t expected_steps);

/// One (T, g, o, a) group in raw environment units.
struct HistoryStep {
  std::size_t timestep = 0;
  double time_to_goal = 0.0;
  std::vector<double> goal;
  std::vector<double> observation;
  /// Empty until the step's action has been executed.
  std::vector<double> action;
};

/// Executed history of one episode, keeping the latest `capacity` timesteps.
class HistoryCache {
 public:
  explicit HistoryCache(std::size_t capacity);

  /// Appends timestep t; the oldest group is dropped whole once the cache
  /// would exceed its capacity. Timesteps must be consecutive and the goal
  /// constant within the episode (std::logic_error otherwise).
  void push(std::size_t t, double time_to_goal, std::vector<double> goal, std::vector<double> observation);
  /// Records the action of the latest timestep.
  void set_action(std::vector<double> action);
  void clear() { steps_.clear(); }

  std::size_t size() const { return steps_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return steps_.empty(); }
  const std::deque<HistoryStep>& steps() const { return steps_; }

  /// One-row model batch of the cached window in normalized units. The
  /// action slot of a step without an action is zero.
  model::SequenceBatch to_batch(const data::TaskSpec& spec, const data::TaskNormStats& norm) const;

 private:
  std::size_t capacity_;
  std::deque<HistoryStep> steps_;
};

/// Chooses the action for timestep t (1-based) of the current episode.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void begin_episode(const env::Environment& env) { (void)env; }
  virtual std::vector<double> act(const env::Environment& env, const env::EnvObservation& obs, std::size_t t) = 0;
};

/// Scripted expert with full state access.
class ExpertPolicy final : public Policy {
 public:
  std::vector<double> act(const env::Environment& env, const env::EnvObservation& obs, std::size_t t) override;
};

class ZeroPolicy final : public Policy {
 public:
  std::vector<double> act(const env::Environment& env, const env::EnvObservation& obs, std::size_t t) override;
};

/// Decision-transformer controller: caches the executed history, fills T
/// by the delay rule and reads the action at the current o token.
class ModelPolicy final : public Policy {
 public:
  /// Throws std::invalid_argument when the bundle has no adapters for
  /// `task_id`.
  ModelPolicy(const model::ModelBundle& bundle, const std::string& task_id);

  void begin_episode(const env::Environment& env) override;
  std::vector<double> act(const env::Environment& env, const env::EnvObservation& obs, std::size_t t) override;
  const HistoryCache& cache() const { return cache_; }

 private:
  const model::ModelBundle& bundle_;
  const data::TaskSpec& spec_;
  const data::TaskNormStats& norm_;
  HistoryCache cache_;
};

struct EpisodeResult {
  bool success = false;
  /// Actions executed before termination.
  std::size_t steps = 0;
  std::vector<std::vector<double>> observations;
  std::vector<std::vector<double>> actions;
  std::vector<std::vector<double>> achieved_goals;
  std::vector<double> goal;
};

/// Resets `env` with `reset_seed` and runs `policy` until success or the
/// step limit. Success is checked before every action.
EpisodeResult rollout_episode(env::Environment& env, Policy& policy, std::uint64_t reset_seed);
/// Same loop starting from the environment's current state.
EpisodeResult run_episode(env::Environment& env, Policy& policy);

/// Reset seed of `episode` under evaluation seed `seed`.
std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode);

struct EvalReport {
  std::string task;
  std::vector<std::uint64_t> seeds;
  std::size_t episodes = 0;
  std::vector<std::size_t> successes;
  std::vector<double> per_seed_rates;
  double mean = 0.0;
  /// Population standard deviation over seeds.
  double std = 0.0;
  double mean_episode_length = 0.0;
  std::size_t min_episode_length = 0;
  std::size_t max_episode_length = 0;

  std::string to_json() const;
};

/// Runs `episodes` rollouts per seed. `make_policy` is called once per seed.
EvalReport evaluate(const std::string& env_name, const std::function<std::unique_ptr<Policy>()>& make_policy,
                    std::size_t episodes = 100, const std::vector<std::uint64_t>& seeds = {0, 1, 2, 3, 4});
/// evaluate() with a ModelPolicy over `bundle`.
EvalReport evaluate(const std::string& env_name, const model::ModelBundle& bundle, std::size_t episodes = 100,
                    const std::vector<std::uint64_t>& seeds = {0, 1, 2, 3, 4});

}  // namespace gcdt::eval
