#include "gcdt/eval/rollout.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace gcdt::eval {

std::size_t estimate_time_to_goal(std::size_t t, std::size_t expected_steps) {
  if (t < 1) throw std::invalid_argument("estimate_time_to_goal: timesteps start at 1");
  return expected_steps + 1 > t ? std::max<std::size_t>(expected_steps + 1 - t, 1) : 1;
}

// ---------------------------------------------------------------------------

HistoryCache::HistoryCache(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("history cache capacity must be >= 1");
}

void HistoryCache::push(std::size_t t, double time_to_goal, std::vector<double> goal, std::vector<double> observation) {
  if (!steps_.empty()) {
    if (t != steps_.back().timestep + 1)
      throw std::logic_error("history cache: timestep " + std::to_string(t) + " does not follow " +
                             std::to_string(steps_.back().timestep));
    if (goal != steps_.back().goal) throw std::logic_error("history cache: goal changed within an episode");
  }
  steps_.push_back(HistoryStep{t, time_to_goal, std::move(goal), std::move(observation), {}});
  if (steps_.size() > capacity_) steps_.pop_front();
}

void HistoryCache::set_action(std::vector<double> action) {
  if (steps_.empty()) throw std::logic_error("history cache: no timestep to attach an action to");
  steps_.back().action = std::move(action);
}

model::SequenceBatch HistoryCache::to_batch(const data::TaskSpec& spec, const data::TaskNormStats& norm) const {
  if (steps_.empty()) throw std::logic_error("history cache is empty");
  auto batch = model::SequenceBatch::zeros(spec, 1, steps_.size());
  batch.lengths[0] = steps_.size();
  auto put = [](std::vector<float>& dst, std::size_t row, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) dst[row * v.size() + j] = static_cast<float>(v[j]);
  };
  const auto g = norm.goal.normalize(steps_.front().goal);
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    const HistoryStep& s = steps_[i];
    batch.time_to_goal[i] = static_cast<float>(s.time_to_goal / norm.time_to_goal_scale);
    put(batch.goal, i, g);
    put(batch.obs, i, norm.obs.normalize(s.observation));
    if (!s.action.empty()) put(batch.act, i, norm.act.normalize(s.action));
  }
  return batch;
}

// ---------------------------------------------------------------------------

std::vector<double> ExpertPolicy::act(const env::Environment& env, const env::EnvObservation&, std::size_t) {
  return env.expert_action();
}

std::vector<double> ZeroPolicy::act(const env::Environment& env, const env::EnvObservation&, std::size_t) {
  return std::vector<double>(env.spec().act_dim, 0.0);
}

namespace {
const data::TaskSpec& bundle_spec(const model::ModelBundle& bundle, const std::string& task_id) {
  if (!bundle.has_task(task_id)) throw std::invalid_argument("checkpoint has no adapters for task '" + task_id + "'");
  return bundle.adapters(task_id).spec;
}
}  // namespace

ModelPolicy::ModelPolicy(const model::ModelBundle& bundle, const std::string& task_id)
    : bundle_(bundle),
      spec_(bundle_spec(bundle, task_id)),
      norm_(bundle.norm_stats(task_id)),
      cache_(bundle.config().max_timesteps) {}

void ModelPolicy::begin_episode(const env::Environment& env) {
  const data::TaskSpec& e = env.spec();
  if (e.obs_dim != spec_.obs_dim || e.goal_dim != spec_.goal_dim || e.act_dim != spec_.act_dim)
    throw std::invalid_argument("environment '" + e.task_id + "' dimensions do not match the adapters of task '" +
                                spec_.task_id + "'");
  cache_.clear();
}

std::vector<double> ModelPolicy::act(const env::Environment&, const env::EnvObservation& obs, std::size_t t) {
  const auto ttg = static_cast<double>(estimate_time_to_goal(t, spec_.expected_steps));
  cache_.push(t, ttg, obs.goal, obs.observation);
  const model::SequenceBatch batch = cache_.to_batch(spec_, norm_);
  model::Tape tape(false);
  const model::Var hidden = bundle_.encode(tape, batch);
  const auto a = model::predict_action(tape, bundle_, hidden, batch, 0, batch.steps);
  std::vector<double> action(a.begin(), a.end());
  cache_.set_action(action);
  return action;
}

// ---------------------------------------------------------------------------

EpisodeResult rollout_episode(env::Environment& env, Policy& policy, std::uint64_t reset_seed) {
  env.reset(reset_seed);
  return run_episode(env, policy);
}

EpisodeResult run_episode(env::Environment& env, Policy& policy) {
  EpisodeResult r;
  env::EnvObservation obs = env.observe();
  policy.begin_episode(env);
  r.goal = obs.goal;
  const std::size_t limit = env.spec().max_episode_steps;
  for (std::size_t t = env.state().step_count + 1; !obs.success && t <= limit; ++t) {
    auto action = policy.act(env, obs, t);
    r.observations.push_back(obs.observation);
    obs = env.step(action);
    r.actions.push_back(std::move(action));
    r.achieved_goals.push_back(obs.achieved_goal);
    r.steps = t;
  }
  r.success = obs.success;
  return r;
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) { return num::mix_seed(seed, episode); }

EvalReport evaluate(const std::string& env_name, const std::function<std::unique_ptr<Policy>()>& make_policy,
                    std::size_t episodes, const std::vector<std::uint64_t>& seeds) {
  if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("evaluate: at least one seed is required");
  auto env = env::make_env(env_name);
  EvalReport rep;
  rep.task = env->name();
  rep.seeds = seeds;
  rep.episodes = episodes;
  std::size_t total_len = 0, runs = 0;
  rep.min_episode_length = env->spec().max_episode_steps;
  for (std::uint64_t seed : seeds) {
    auto policy = make_policy();
    std::size_t ok = 0;
    for (std::size_t e = 0; e < episodes; ++e) {
      const EpisodeResult r = rollout_episode(*env, *policy, episode_seed(seed, e));
      ok += r.success ? 1 : 0;
      total_len += r.steps;
      ++runs;
      rep.min_episode_length = std::min(rep.min_episode_length, r.steps);
      rep.max_episode_length = std::max(rep.max_episode_length, r.steps);
    }
    rep.successes.push_back(ok);
    rep.per_seed_rates.push_back(static_cast<double>(ok) / static_cast<double>(episodes));
  }
  double sum = 0.0;
  for (double r : rep.per_seed_rates) sum += r;
  rep.mean = sum / static_cast<double>(seeds.size());
  double var = 0.0;
  for (double r : rep.per_seed_rates) var += (r - rep.mean) * (r - rep.mean);
  rep.std = std::sqrt(var / static_cast<double>(seeds.size()));
  rep.mean_episode_length = static_cast<double>(total_len) / static_cast<double>(runs);
  return rep;
}

EvalReport evaluate(const std::string& env_name, const model::ModelBundle& bundle, std::size_t episodes,
                    const std::vector<std::uint64_t>& seeds) {
  return evaluate(
      env_name, [&] { return std::make_unique<ModelPolicy>(bundle, env_name); }, episodes, seeds);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["seeds"] = seeds;
  j["episodes"] = episodes;
  j["successes"] = successes;
  j["per_seed_rates"] = per_seed_rates;
  j["mean"] = mean;
  j["std"] = std;
  j["mean_episode_length"] = mean_episode_length;
  j["min_episode_length"] = min_episode_length;
  j["max_episode_length"] = max_episode_length;
  return j.dump(2);
}

}  // namespace gcdt::eval
