#include <gtest/gtest.h>

#include <cmath>

#include <json.hpp>

#include "gcdt/eval/rollout.h"
#include "support/model_oracles.h"

using namespace gcdt;
using model::ItemType;

namespace {

/// Random reach3d bundle with non-trivial normalization.
model::ModelBundle reach_bundle(std::uint64_t seed, std::size_t k) {
  model::ModelConfig c = oracle::small_config();
  c.max_timesteps = k;
  model::ModelBundle m(c, seed);
  const data::TaskSpec spec = env::make_env("reach3d", 0)->spec();
  m.add_task(spec);
  data::TaskNormStats n;
  n.obs = {{0.5, 0.5, 0.5, 0.2}, {0.3, 0.25, 0.2, 0.5}};
  n.goal = {{0.5, 0.5, 0.5}, {0.3, 0.3, 0.3}};
  n.act = {{0.0, 0.0, 0.0, 0.5}, {0.6, 0.6, 0.6, 0.5}};
  n.time_to_goal_scale = static_cast<double>(spec.max_episode_steps);
  m.norm_stats()[spec.task_id] = n;
  return m;
}

std::vector<float> as_floats(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(DelayRule, HandValues) {
  EXPECT_EQ(eval::estimate_time_to_goal(10, 50), 41u);
  EXPECT_EQ(eval::estimate_time_to_goal(1, 50), 50u);
  EXPECT_EQ(eval::estimate_time_to_goal(50, 50), 1u);
  EXPECT_EQ(eval::estimate_time_to_goal(80, 50), 1u);
  EXPECT_THROW(eval::estimate_time_to_goal(0, 50), std::invalid_argument);
}

TEST(HistoryCache, KeepsLatestTimestepsWhole) {
  eval::HistoryCache cache(100);
  const std::vector<double> goal{0.1, 0.2, 0.3};
  for (std::size_t t = 1; t <= 120; ++t) {
    cache.push(t, 1.0, goal, {static_cast<double>(t)});
    cache.set_action({-static_cast<double>(t)});
    ASSERT_EQ(cache.size(), std::min<std::size_t>(t, 100));
    ASSERT_EQ(cache.steps().back().timestep, t);
  }
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& s = cache.steps()[i];
    EXPECT_EQ(s.timestep, 21 + i);
    EXPECT_EQ(s.observation, (std::vector<double>{static_cast<double>(21 + i)}));
    EXPECT_EQ(s.action, (std::vector<double>{-static_cast<double>(21 + i)}));
  }
}

TEST(HistoryCache, RejectsGapsGoalChangesAndZeroCapacity) {
  EXPECT_THROW(eval::HistoryCache(0), std::invalid_argument);
  eval::HistoryCache cache(4);
  EXPECT_THROW(cache.set_action({0.0}), std::logic_error);
  cache.push(1, 1.0, {0.0}, {0.0});
  EXPECT_THROW(cache.push(3, 1.0, {0.0}, {0.0}), std::logic_error);
  EXPECT_THROW(cache.push(2, 1.0, {1.0}, {0.0}), std::logic_error);
}

TEST(HistoryCache, BatchIsNormalizedWithEmptyTrailingAction) {
  const auto m = reach_bundle(1, 8);
  const auto& spec = m.adapters("reach3d").spec;
  const auto& n = m.norm_stats("reach3d");
  eval::HistoryCache cache(8);
  cache.push(1, 50.0, {0.8, 0.2, 0.5}, {0.5, 0.75, 0.1, 0.7});
  cache.set_action({0.6, -0.6, 0.0, 1.0});
  cache.push(2, 49.0, {0.8, 0.2, 0.5}, {0.56, 0.7, 0.1, 0.7});
  const auto b = cache.to_batch(spec, n);
  EXPECT_EQ(b.lengths[0], 2u);
  EXPECT_EQ(b.time_to_goal, (std::vector<float>{1.0f, 49.0f / 50.0f}));
  // (x - mean) / std by hand.
  EXPECT_FLOAT_EQ(b.goal[0], 1.0f);
  EXPECT_FLOAT_EQ(b.goal[1], -1.0f);
  EXPECT_FLOAT_EQ(b.obs[1], 1.0f);
  EXPECT_FLOAT_EQ(b.obs[2], -2.0f);
  EXPECT_FLOAT_EQ(b.act[0], 1.0f);
  EXPECT_FLOAT_EQ(b.act[3], 1.0f);
  for (std::size_t k = 4; k < 8; ++k) EXPECT_EQ(b.act[k], 0.0f);
}

TEST(Evaluate, ExpertPolicySucceedsEverywhere) {
  const auto rep = eval::evaluate("reach3d", [] { return std::make_unique<eval::ExpertPolicy>(); });
  EXPECT_EQ(rep.mean, 1.0);
  EXPECT_EQ(rep.std, 0.0);
}

TEST(Evaluate, ZeroPolicyAlmostNeverSucceeds) {
  const auto rep = eval::evaluate("reach3d", [] { return std::make_unique<eval::ZeroPolicy>(); });
  EXPECT_LE(rep.mean, 0.01);
}

TEST(Evaluate, ReportCountsAndStatistics) {
  // Alternating policy: the expert on even seeds, zeros on odd seeds.
  int calls = 0;
  const auto rep = eval::evaluate("reach3d", [&]() -> std::unique_ptr<eval::Policy> {
    if (calls++ % 2 == 0) return std::make_unique<eval::ExpertPolicy>();
    return std::make_unique<eval::ZeroPolicy>();
  });
  EXPECT_EQ(calls, 5);
  EXPECT_EQ(rep.episodes, 100u);
  ASSERT_EQ(rep.successes.size(), 5u);
  ASSERT_EQ(rep.per_seed_rates.size(), 5u);
  double mean = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_DOUBLE_EQ(rep.per_seed_rates[i], rep.successes[i] / 100.0);
    mean += rep.per_seed_rates[i] / 5.0;
  }
  double var = 0.0;
  for (double r : rep.per_seed_rates) var += (r - mean) * (r - mean) / 5.0;
  EXPECT_DOUBLE_EQ(rep.mean, mean);
  EXPECT_NEAR(rep.std, std::sqrt(var), 1e-12);
  EXPECT_LE(rep.min_episode_length, rep.mean_episode_length);
  EXPECT_GE(static_cast<double>(rep.max_episode_length), rep.mean_episode_length);

  const auto j = nlohmann::json::parse(rep.to_json());
  for (const char* key : {"task", "seeds", "episodes", "per_seed_rates", "mean", "std", "mean_episode_length"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["seeds"].size(), 5u);
  EXPECT_THROW(eval::evaluate("reach3d", [] { return std::make_unique<eval::ZeroPolicy>(); }, 0), std::invalid_argument);
}

TEST(Rollout, ZeroStepSuccessTakesNoAction) {
  auto e = env::make_env("reach3d", 0);
  env::EnvState s = e->state();
  s.goal = {s.arms[0].position[0], s.arms[0].position[1], s.arms[0].position[2]};
  e->set_state(s);
  eval::ZeroPolicy p;
  const auto r = eval::run_episode(*e, p);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(r.actions.empty());
}

TEST(Rollout, ModelEpisodeIsDeterministic) {
  const auto m = reach_bundle(2, 8);
  auto e = env::make_env("reach3d", 0);
  eval::ModelPolicy p1(m, "reach3d"), p2(m, "reach3d");
  const auto a = eval::rollout_episode(*e, p1, 11);
  const auto b = eval::rollout_episode(*e, p2, 11);
  EXPECT_EQ(a.actions, b.actions);
  EXPECT_EQ(a.observations, b.observations);
}

TEST(Rollout, ExecutedActionsMatchModelOnRebuiltHistory) {
  // Rebuilds each step's input from the recorded episode (last K steps,
  // delay-rule T, earlier actions, zero trailing action) and requires the
  // executed action to equal the action head output there, bitwise.
  constexpr std::size_t k = 6;
  const auto m = reach_bundle(3, k);
  const auto& spec = m.adapters("reach3d").spec;
  const auto& n = m.norm_stats("reach3d");
  auto e = env::make_env("reach3d", 0);
  eval::ModelPolicy p(m, "reach3d");
  const auto r = eval::rollout_episode(*e, p, 5);
  ASSERT_GT(r.steps, k + 5);
  for (std::size_t t = 1; t <= r.steps; ++t) {
    const std::size_t first = t > k ? t - k + 1 : 1, len = t - first + 1;
    auto batch = model::SequenceBatch::zeros(spec, 1, len);
    batch.lengths[0] = len;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t s = first + i;
      const double ttg = std::max<double>(static_cast<double>(spec.expected_steps) + 1.0 - static_cast<double>(s), 1.0);
      batch.time_to_goal[i] = static_cast<float>(ttg / n.time_to_goal_scale);
      const auto g = as_floats(n.goal.normalize(r.goal));
      const auto o = as_floats(n.obs.normalize(r.observations[s - 1]));
      std::copy(g.begin(), g.end(), batch.goal.begin() + static_cast<std::ptrdiff_t>(i * spec.goal_dim));
      std::copy(o.begin(), o.end(), batch.obs.begin() + static_cast<std::ptrdiff_t>(i * spec.obs_dim));
      if (s < t) {
        const auto a = as_floats(n.act.normalize(r.actions[s - 1]));
        std::copy(a.begin(), a.end(), batch.act.begin() + static_cast<std::ptrdiff_t>(i * spec.act_dim));
      }
    }
    model::Tape tape(false);
    const model::Var h = m.encode(tape, batch);
    const auto& out = tape.value(m.head(tape, h, "reach3d", ItemType::kAction, {batch.token_row(0, len, ItemType::kObservation)}));
    ASSERT_EQ(out.numel(), spec.act_dim);
    for (std::size_t j = 0; j < spec.act_dim; ++j) {
      ASSERT_EQ(r.actions[t - 1][j], static_cast<double>(out.data()[j])) << "t " << t;
      ASSERT_LT(std::abs(r.actions[t - 1][j]), 1.0);
    }
  }
}

TEST(Rollout, CacheHoldsMinOfStepAndWindow) {
  constexpr std::size_t k = 5;
  const auto m = reach_bundle(4, k);
  auto e = env::make_env("reach3d", 0);
  e->reset(9);
  eval::ModelPolicy p(m, "reach3d");
  p.begin_episode(*e);
  env::EnvObservation obs = e->observe();
  for (std::size_t t = 1; t <= 20 && !obs.success; ++t) {
    obs = e->step(p.act(*e, obs, t));
    const auto& steps = p.cache().steps();
    ASSERT_EQ(steps.size(), std::min(t, k));
    for (std::size_t i = 0; i < steps.size(); ++i) ASSERT_EQ(steps[i].timestep, t - steps.size() + 1 + i);
  }
}

TEST(Rollout, PolicyErrors) {
  const auto m = reach_bundle(5, 4);
  EXPECT_THROW(eval::ModelPolicy(m, "pickplace3d"), std::invalid_argument);
  eval::ModelPolicy p(m, "reach3d");
  auto pp = env::make_env("pickplace3d", 0);
  EXPECT_THROW(p.begin_episode(*pp), std::invalid_argument);
}
