#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gcdt/data/dataset_io.h"
#include "gcdt/data/normalization.h"
#include "gcdt/data/relabel.h"
#include "gcdt/data/sampling.h"
#include "support/synthetic.h"
#include "support/tempdir.h"

using namespace gcdt;
using data::Dataset;
using data::Provenance;
using data::Trajectory;

namespace {

data::TaskRegistry registry(const data::TaskSpec& s) { return {{s.task_id, s}}; }

Trajectory line_trajectory(std::size_t length) {
  // Scalar items make hand checks readable: obs t, act 0.1 t, achieved 10 t.
  Trajectory tr;
  tr.task_id = "line";
  tr.goal = {-1.0};
  for (std::size_t t = 1; t <= length; ++t) {
    tr.observations.push_back({static_cast<double>(t)});
    tr.actions.push_back({0.1 * static_cast<double>(t)});
    tr.achieved_goals.push_back({10.0 * static_cast<double>(t)});
  }
  return tr;
}

data::TaskSpec line_spec() { return oracle::synthetic_spec("line", 1, 1, 1, 20); }

}  // namespace

// ---- trajectory and spec ----------------------------------------------------

TEST(TaskSpec, Validation) {
  data::TaskSpec s = oracle::synthetic_spec();
  EXPECT_NO_THROW(s.validate());
  s.expected_steps = s.max_episode_steps + 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = oracle::synthetic_spec();
  s.act_dim = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Trajectory, TimeToGoalIsInclusiveRemainingSteps) {
  const Trajectory tr = line_trajectory(5);
  EXPECT_EQ(tr.time_to_goal(1), 5u);
  EXPECT_EQ(tr.time_to_goal(5), 1u);
  EXPECT_THROW(tr.time_to_goal(0), std::out_of_range);
  EXPECT_THROW(tr.time_to_goal(6), std::out_of_range);
}

TEST(Trajectory, ValidationCatchesViolations) {
  const data::TaskSpec spec = line_spec();
  Trajectory tr = line_trajectory(3);
  EXPECT_NO_THROW(tr.validate(spec));
  tr.actions[1] = {1.5};
  EXPECT_THROW(tr.validate(spec), data::DatasetError);
  tr = line_trajectory(3);
  tr.achieved_goals.pop_back();
  EXPECT_THROW(tr.validate(spec), data::DatasetError);
  tr = line_trajectory(3);
  tr.goal = {1.0, 2.0};
  EXPECT_THROW(tr.validate(spec), data::DatasetError);
}

// ---- file format -------------------------------------------------------------

TEST(DatasetIo, RoundTripIsExact) {
  num::Pcg32 rng(1);
  const data::TaskSpec spec = oracle::synthetic_spec();
  const Dataset d = oracle::random_dataset(rng, spec, 12, 9);
  oracle::TempDir dir;
  data::save_dataset(dir / "d.jsonl", d, registry(spec));
  EXPECT_TRUE(std::filesystem::exists(dir / "d.tasks.json"));
  EXPECT_EQ(data::load_dataset(dir / "d.jsonl"), d);
}

TEST(DatasetIo, HundredLinesLoadAsOriginals) {
  num::Pcg32 rng(2);
  const data::TaskSpec spec = oracle::synthetic_spec();
  const Dataset d = oracle::random_dataset(rng, spec, 100, 5);
  oracle::TempDir dir;
  data::save_dataset(dir / "d.jsonl", d, registry(spec));
  const std::string text = oracle::read_file(dir / "d.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
  const Dataset back = data::load_dataset(dir / "d.jsonl");
  EXPECT_EQ(back.size(), 100u);
  EXPECT_EQ(back.count(Provenance::kOriginal), 100u);
}

TEST(DatasetIo, OriginalFilesCarryOnlyBaseKeys) {
  const std::string line = data::format_trajectory_line(line_trajectory(2), false);
  for (const char* key : {"\"task\"", "\"obs\"", "\"act\"", "\"goal\"", "\"achieved\""})
    EXPECT_NE(line.find(key), std::string::npos) << key;
  EXPECT_EQ(line.find("provenance"), std::string::npos);
}

TEST(DatasetIo, EmptyFileIsEmptyDataset) {
  oracle::TempDir dir;
  oracle::write_file(dir / "e.jsonl", "");
  EXPECT_TRUE(data::load_dataset(dir / "e.jsonl", registry(line_spec())).empty());
}

TEST(DatasetIo, DimensionMismatchCitesLine) {
  oracle::TempDir dir;
  const data::TaskSpec spec = oracle::synthetic_spec("toy", 3, 2, 5);
  num::Pcg32 rng(3);
  const data::TaskSpec four = oracle::synthetic_spec("toy", 3, 2, 4);
  const std::string good = data::format_trajectory_line(oracle::random_trajectory(rng, spec, 2), false);
  const std::string bad = data::format_trajectory_line(oracle::random_trajectory(rng, four, 2), false);
  oracle::write_file(dir / "d.jsonl", good + "\n" + bad + "\n");
  try {
    data::load_dataset(dir / "d.jsonl", registry(spec));
    FAIL() << "expected DatasetError";
  } catch (const data::DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, RejectsMalformedRecords) {
  EXPECT_THROW(data::parse_trajectory_line("{not json"), data::DatasetError);
  EXPECT_THROW(data::parse_trajectory_line(R"({"task":"x","obs":[[1]],"act":[[0]],"goal":[1]})"),
               data::DatasetError);
  EXPECT_THROW(
      data::parse_trajectory_line(R"({"task":"x","obs":[[1]],"act":[[0]],"goal":[1],"achieved":[[1]],"extra":1})"),
      data::DatasetError);
  oracle::TempDir dir;
  oracle::write_file(dir / "d.jsonl", data::format_trajectory_line(line_trajectory(2), false) + "\n");
  EXPECT_THROW(data::load_dataset(dir / "d.jsonl", registry(oracle::synthetic_spec("other"))), data::DatasetError);
}

TEST(DatasetIo, TaskRegistryJsonRoundTrip) {
  data::TaskRegistry r{{"a", oracle::synthetic_spec("a")}, {"b", oracle::synthetic_spec("b", 4, 3, 4, 50)}};
  r["b"].success_threshold = 0.05;
  EXPECT_EQ(data::task_registry_from_json(data::task_registry_to_json(r)), r);
  EXPECT_THROW(data::task_registry_from_json("[1,2]"), data::DatasetError);
}

TEST(DatasetIo, SidecarPath) {
  EXPECT_EQ(data::sidecar_path("dir/demos.jsonl"), std::filesystem::path("dir/demos.tasks.json"));
}

// ---- hindsight relabeling ------------------------------------------------------

TEST(Relabel, LengthThreeYieldsThreePrefixes) {
  Dataset d;
  d.trajectories.push_back(line_trajectory(3));
  const Dataset out = data::hindsight_relabel(d);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out.trajectories[0], d.trajectories[0]);
  for (std::size_t t = 1; t <= 3; ++t) {
    const Trajectory& r = out.trajectories[t];
    EXPECT_EQ(r.provenance, Provenance::kRelabeled);
    EXPECT_EQ(r.length(), t);
  }
  const Trajectory& two = out.trajectories[2];
  EXPECT_EQ(two.goal, std::vector<double>{20.0});
  EXPECT_EQ(two.time_to_goal(1), 2u);
  EXPECT_EQ(two.time_to_goal(2), 1u);
}

TEST(Relabel, MatchesBruteForceEnumeration) {
  num::Pcg32 rng(4);
  const data::TaskSpec spec = oracle::synthetic_spec();
  const Dataset d = oracle::random_dataset(rng, spec, 50, 12);
  const Dataset out = data::hindsight_relabel(d);
  EXPECT_EQ(out, oracle::brute_force_relabel(d));
  EXPECT_EQ(out.count(Provenance::kRelabeled), d.total_timesteps());
  for (const Trajectory& r : out.trajectories) {
    if (r.provenance != Provenance::kRelabeled) continue;
    EXPECT_EQ(r.achieved_goals.back(), r.goal);
  }
}

TEST(Relabel, CountFormula) {
  num::Pcg32 rng(5);
  const data::TaskSpec spec = oracle::synthetic_spec("toy", 3, 2, 2, 60);
  Dataset d;
  for (int i = 0; i < 100; ++i) d.trajectories.push_back(oracle::random_trajectory(rng, spec, 50));
  EXPECT_EQ(data::hindsight_relabel(d).size(), 5100u);
}

TEST(Relabel, SingleStepTrajectoryStillRelabels) {
  Dataset d;
  d.trajectories.push_back(line_trajectory(1));
  EXPECT_EQ(data::hindsight_relabel(d).size(), 2u);
}

TEST(Relabel, RejectsAlreadyRelabeledInput) {
  Dataset d;
  d.trajectories.push_back(line_trajectory(2));
  EXPECT_THROW(data::hindsight_relabel(data::hindsight_relabel(d)), data::DatasetError);
}

TEST(Relabel, DiskAndMemoryPathsAgree) {
  num::Pcg32 rng(6);
  const data::TaskSpec spec = oracle::synthetic_spec();
  const Dataset d = oracle::random_dataset(rng, spec, 7, 6);
  oracle::TempDir dir;
  data::save_dataset(dir / "aug.jsonl", data::hindsight_relabel(d), registry(spec));
  EXPECT_EQ(data::load_dataset(dir / "aug.jsonl"), data::hindsight_relabel(d));
}

// ---- normalization -----------------------------------------------------------

TEST(Normalization, HandComputedMeanAndStd) {
  Dataset d;
  Trajectory tr = line_trajectory(2);
  tr.observations = {{0.0}, {2.0}};
  d.trajectories.push_back(tr);
  const auto stats = data::compute_norm_stats(d, registry(line_spec())).at("line");
  EXPECT_DOUBLE_EQ(stats.obs.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.obs.std[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.time_to_goal_scale, 20.0);
}

TEST(Normalization, ConstantItemsFloorStd) {
  Dataset d;
  Trajectory tr = line_trajectory(3);
  tr.observations = {{4.0}, {4.0}, {4.0}};
  d.trajectories.push_back(tr);
  const auto stats = data::compute_norm_stats(d, registry(line_spec())).at("line");
  EXPECT_DOUBLE_EQ(stats.obs.std[0], data::kMinStd);
  EXPECT_DOUBLE_EQ(stats.obs.normalize({4.0})[0], 0.0);
  EXPECT_DOUBLE_EQ(stats.goal.std[0], data::kMinStd);
}

TEST(Normalization, RoundTrip) {
  num::Pcg32 rng(7);
  const data::TaskSpec spec = oracle::synthetic_spec();
  const Dataset d = oracle::random_dataset(rng, spec, 10, 8);
  const auto stats = data::compute_norm_stats(d, registry(spec)).at(spec.task_id);
  for (const auto& row : d.trajectories[3].observations) {
    const auto back = stats.obs.denormalize(stats.obs.normalize(row));
    for (std::size_t i = 0; i < row.size(); ++i) EXPECT_NEAR(back[i], row[i], 1e-6);
  }
}

TEST(Normalization, Errors) {
  EXPECT_THROW(data::compute_norm_stats(Dataset{}, {}), data::DatasetError);
  Dataset d;
  d.trajectories.push_back(line_trajectory(2));
  EXPECT_THROW(data::compute_norm_stats(d, {}), data::DatasetError);
}

// ---- window sampling ---------------------------------------------------------

TEST(Sampling, HandExamples) {
  Dataset d;
  d.trajectories.push_back(line_trajectory(5));
  const data::WindowSampler wide(d, 100), narrow(d, 2);
  const data::Window w = wide.window_at(0, 5);
  EXPECT_EQ(w.first, 1u);
  EXPECT_EQ(w.last, 5u);
  EXPECT_EQ(w.time_to_goal(), (std::vector<std::size_t>{5, 4, 3, 2, 1}));
  const data::Window n = narrow.window_at(0, 4);
  EXPECT_EQ(n.first, 3u);
  EXPECT_EQ(n.last, 4u);
  EXPECT_EQ(n.time_to_goal(), (std::vector<std::size_t>{3, 2}));
  EXPECT_THROW(narrow.window_at(0, 6), std::out_of_range);
}

TEST(Sampling, SingleStepTrajectory) {
  Dataset d;
  d.trajectories.push_back(line_trajectory(1));
  num::Pcg32 rng(8);
  const data::Window w = data::sample_window(d, rng, 10);
  EXPECT_EQ(w.length(), 1u);
  EXPECT_EQ(w.time_to_goal(), std::vector<std::size_t>{1});
}

TEST(Sampling, EndsAreUniformOverAllTimesteps) {
  // Lengths 1 and 3: each of the four timesteps ends a window w.p. 1/4.
  Dataset d;
  d.trajectories.push_back(line_trajectory(1));
  d.trajectories.push_back(line_trajectory(3));
  const data::WindowSampler s(d, 2);
  num::Pcg32 rng(9);
  std::map<std::pair<const Trajectory*, std::size_t>, int> hits;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const data::Window w = s.sample(rng);
    ASSERT_GE(w.first, 1u);
    ASSERT_LE(w.last, w.trajectory->length());
    ASSERT_EQ(w.length(), std::min<std::size_t>(2, w.last));
    ++hits[{w.trajectory, w.last}];
  }
  EXPECT_EQ(hits.size(), 4u);
  for (const auto& [key, count] : hits) EXPECT_NEAR(count / static_cast<double>(n), 0.25, 0.01);
}

TEST(Sampling, Errors) {
  EXPECT_THROW(data::WindowSampler(Dataset{}, 4), data::DatasetError);
  Dataset d;
  d.trajectories.push_back(line_trajectory(2));
  EXPECT_THROW(data::WindowSampler(d, 0), std::invalid_argument);
}
