#include <gtest/gtest.h>

#include <cmath>

#include "gcdt/data/dataset_io.h"
#include "gcdt/env/env.h"
#include "support/tempdir.h"

using namespace gcdt;

namespace {

/// Runs the expert from `seed` and returns the steps to success, or 0.
std::size_t expert_steps(env::Environment& e, std::uint64_t seed) {
  if (e.reset(seed).success) return 0;
  for (std::size_t t = 1; t <= e.spec().max_episode_steps; ++t)
    if (e.step(e.expert_action()).success) return t;
  return 0;
}

}  // namespace

TEST(Env, SpecsMatchDocumentedDimensions) {
  struct Dims {
    const char* name;
    std::size_t obs, goal, act, max;
  };
  for (const Dims& d : {Dims{"reach3d", 4, 3, 4, 50}, Dims{"pickplace3d", 10, 3, 4, 60}, Dims{"bireach3d", 8, 6, 8, 50}}) {
    const auto e = env::make_env(d.name, 0);
    EXPECT_EQ(e->spec().obs_dim, d.obs) << d.name;
    EXPECT_EQ(e->spec().goal_dim, d.goal) << d.name;
    EXPECT_EQ(e->spec().act_dim, d.act) << d.name;
    EXPECT_EQ(e->spec().max_episode_steps, d.max) << d.name;
    EXPECT_EQ(e->observe().observation.size(), d.obs) << d.name;
  }
  EXPECT_THROW(env::make_env("cartpole", 0), std::invalid_argument);
}

TEST(Env, SameSeedSameStart) {
  for (const auto& name : env::env_names()) {
    const auto a = env::make_env(name, 17), b = env::make_env(name, 17);
    EXPECT_EQ(a->observe().observation, b->observe().observation) << name;
    EXPECT_EQ(a->observe().goal, b->observe().goal) << name;
  }
}

TEST(Env, ResetsKeepGoalsInsideAndSeparated) {
  for (const auto& name : env::env_names()) {
    auto e = env::make_env(name, 0);
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const env::EnvObservation o = e->reset(s);
      ASSERT_FALSE(o.success);
      for (double g : o.goal) {
        ASSERT_GE(g, 0.0);
        ASSERT_LE(g, 1.0);
      }
      // The achieved goal is the tracked entity's position at reset.
      for (std::size_t k = 0; k < o.goal.size(); k += 3) {
        const env::Vec3 g{o.goal[k], o.goal[k + 1], o.goal[k + 2]};
        const env::Vec3 a{o.achieved_goal[k], o.achieved_goal[k + 1], o.achieved_goal[k + 2]};
        ASSERT_GE(env::distance(a, g), env::kMinGoalSeparation) << name << " seed " << s;
      }
    }
  }
}

TEST(Env, InitialAchievedGoalIsEntityPosition) {
  const auto r = env::make_env("reach3d", 3);
  const auto& p = r->state().arms[0].position;
  EXPECT_EQ(r->observe().achieved_goal, (std::vector<double>{p[0], p[1], p[2]}));
  const auto pp = env::make_env("pickplace3d", 3);
  const auto& q = pp->state().objects.at(0).position;
  EXPECT_EQ(pp->observe().achieved_goal, (std::vector<double>{q[0], q[1], q[2]}));
}

TEST(Env, KinematicsHandComputation) {
  auto e = env::make_env("reach3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.5, 0.5, 0.5};
  s.goal = {0.9, 0.9, 0.9};
  e->set_state(s);
  const env::EnvObservation o = e->step({1.0, 0.0, 0.0, 1.0});
  EXPECT_NEAR(o.observation[0], 0.55, 1e-15);
  EXPECT_EQ(o.observation[1], 0.5);
  EXPECT_EQ(o.observation[2], 0.5);
  EXPECT_EQ(e->state().step_count, 1u);
}

TEST(Env, ZeroActionOnlyAdvancesCounter) {
  auto e = env::make_env("pickplace3d", 4);
  const env::EnvState before = e->state();
  e->step({0.0, 0.0, 0.0, 1.0});
  const env::EnvState& after = e->state();
  EXPECT_EQ(after.arms[0].position, before.arms[0].position);
  EXPECT_EQ(after.objects[0].position, before.objects[0].position);
  EXPECT_EQ(after.step_count, before.step_count + 1);
}

TEST(Env, WorkspaceClampAndActionClampFlag) {
  auto e = env::make_env("reach3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.99, 0.01, 0.5};
  e->set_state(s);
  const env::EnvObservation o = e->step({1.0, -1.0, 0.0, 1.0});
  EXPECT_FALSE(o.action_clamped);
  EXPECT_EQ(o.observation[0], 1.0);
  EXPECT_EQ(o.observation[1], 0.0);
  EXPECT_TRUE(e->step({2.0, 0.0, 0.0, 1.0}).action_clamped);
}

TEST(Env, SuccessThreshold) {
  auto e = env::make_env("reach3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.5, 0.5, 0.5};
  s.goal = {0.519, 0.5, 0.5};
  e->set_state(s);
  EXPECT_TRUE(e->success());
  s.goal = {0.521, 0.5, 0.5};
  e->set_state(s);
  EXPECT_FALSE(e->success());
}

TEST(Env, StepErrors) {
  auto e = env::make_env("reach3d", 0);
  EXPECT_THROW(e->step({0.0, 0.0}), std::invalid_argument);
  EXPECT_THROW(e->step({NAN, 0.0, 0.0, 0.0}), std::invalid_argument);
  for (std::size_t t = 0; t < e->spec().max_episode_steps; ++t) e->step({0.0, 0.0, 0.0, 1.0});
  EXPECT_THROW(e->step({0.0, 0.0, 0.0, 1.0}), std::logic_error);
}

TEST(Env, GripperAttachesNearbyObjectAndReleases) {
  auto e = env::make_env("pickplace3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.5, 0.5, 0.5};
  s.objects[0].position = {0.5, 0.5, 0.52};
  e->set_state(s);
  e->step({0.0, 0.0, 0.0, -1.0});
  EXPECT_EQ(e->state().objects[0].held_by, 0);
  e->step({1.0, 0.0, 0.0, -1.0});
  EXPECT_NEAR(e->state().objects[0].position[0], e->state().arms[0].position[0], 1e-12);
  e->step({0.0, 0.0, 0.0, 1.0});
  EXPECT_EQ(e->state().objects[0].held_by, -1);
}

TEST(Env, GripperIgnoresDistantObject) {
  auto e = env::make_env("pickplace3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.5, 0.5, 0.5};
  s.objects[0].position = {0.5, 0.5, 0.54};
  e->set_state(s);
  e->step({0.0, 0.0, 0.0, -1.0});
  EXPECT_EQ(e->state().objects[0].held_by, -1);
}

TEST(Expert, ReachAtGoalCommandsNoMotion) {
  auto e = env::make_env("reach3d", 0);
  env::EnvState s = e->state();
  s.arms[0].position = {0.3, 0.4, 0.5};
  s.goal = {0.3, 0.4, 0.5};
  e->set_state(s);
  const auto a = e->expert_action();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], 0.0, 1e-12);
}

TEST(Expert, SucceedsFromThousandResets) {
  for (const auto& name : env::env_names()) {
    auto e = env::make_env(name, 0);
    std::size_t failures = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) failures += expert_steps(*e, s) == 0;
    EXPECT_EQ(failures, 0u) << name;
  }
}

TEST(Expert, PickplaceAttachesBeforeCarry) {
  auto e = env::make_env("pickplace3d", 0);
  for (std::uint64_t s = 0; s < 200; ++s) {
    e->reset(s);
    bool success = false;
    for (std::size_t t = 0; t < e->spec().max_episode_steps && !success; ++t) {
      if (env::pickplace_phase(e->state(), e->spec().success_threshold) == 3) {
        ASSERT_EQ(e->state().objects[0].held_by, 0) << "seed " << s << " step " << t;
      }
      success = e->step(e->expert_action()).success;
    }
    ASSERT_TRUE(success) << "seed " << s;
  }
}

TEST(Demos, HundredReachEpisodes) {
  oracle::TempDir dir;
  const env::DemoReport r = env::generate_demos("reach3d", 100, 0, dir / "d.jsonl");
  EXPECT_EQ(r.written, 100u);
  const std::string text = oracle::read_file(dir / "d.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
  const data::Dataset d = data::load_dataset(dir / "d.jsonl");
  ASSERT_EQ(d.size(), 100u);
  const data::TaskSpec spec = data::load_task_registry(dir / "d.tasks.json").at("reach3d");
  EXPECT_EQ(spec.expected_steps, static_cast<std::size_t>(std::ceil(r.mean_length)));
  for (const auto& tr : d.trajectories) {
    const auto& last = tr.achieved_goals.back();
    const env::Vec3 a{last[0], last[1], last[2]}, g{tr.goal[0], tr.goal[1], tr.goal[2]};
    EXPECT_LT(env::distance(a, g), spec.success_threshold);
  }
}

TEST(Demos, RegenerationIsByteIdentical) {
  oracle::TempDir dir;
  env::generate_demos("pickplace3d", 10, 5, dir / "a.jsonl");
  env::generate_demos("pickplace3d", 10, 5, dir / "b.jsonl");
  EXPECT_EQ(oracle::read_file(dir / "a.jsonl"), oracle::read_file(dir / "b.jsonl"));
  EXPECT_EQ(oracle::read_file(dir / "a.tasks.json"), oracle::read_file(dir / "b.tasks.json"));
}

TEST(Demos, RecordsAchievedGoalAfterAction) {
  const env::Demos demos = env::collect_demos("reach3d", 3, 9);
  for (const auto& tr : demos.dataset.trajectories) {
    for (std::size_t t = 1; t < tr.length(); ++t) {
      // Achieved goal after a_t is the arm position observed at t+1.
      for (int i = 0; i < 3; ++i) EXPECT_EQ(tr.achieved_goals[t - 1][i], tr.observations[t][i]);
    }
  }
}
