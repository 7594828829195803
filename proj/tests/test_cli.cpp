#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include <json.hpp>

#include "gcdt/model/model.h"
#include "support/tempdir.h"

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  Outcome run(const std::string& args) {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = std::string(GCDT_CLI_PATH) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, gcdt::oracle::read_file(out),
            gcdt::oracle::read_file(err)};
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  gcdt::oracle::TempDir dir_;
};

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_F(Cli, HelpExitsZeroForEveryCommand) {
  const Outcome top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* c : {"gen-data", "augment", "pretrain", "finetune", "eval", "inspect"})
    EXPECT_NE(top.out.find(c), std::string::npos) << c;
  EXPECT_NE(run("gen-data --help").out.find("--episodes"), std::string::npos);
  EXPECT_NE(run("augment --help").out.find("--in"), std::string::npos);
  EXPECT_NE(run("eval --help").out.find("--seeds"), std::string::npos);
  EXPECT_NE(run("inspect --help").out.find("--ckpt"), std::string::npos);
  const Outcome pre = run("pretrain --help");
  EXPECT_EQ(pre.code, 0);
  EXPECT_NE(pre.out.find("weight.reconstruction"), std::string::npos);
  EXPECT_EQ(run("finetune --help").code, 0);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gen-data --env reach3d --episodes 0 --seed 0 --out " + path("d.jsonl")).code, 1);
  EXPECT_FALSE(std::filesystem::exists(path("d.jsonl")));
  EXPECT_EQ(run("gen-data --env cartpole --episodes 3 --seed 0 --out " + path("d.jsonl")).code, 1);
  EXPECT_EQ(run("pretrain").code, 1);
  EXPECT_EQ(run("eval --env reach3d").code, 1);
}

TEST_F(Cli, GenDataWritesFileAndSidecarReproducibly) {
  const Outcome a = run("gen-data --env reach3d --episodes 100 --seed 0 --out " + path("a.jsonl"));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(lines(gcdt::oracle::read_file(path("a.jsonl"))), 100u);
  EXPECT_TRUE(std::filesystem::exists(path("a.tasks.json")));
  ASSERT_EQ(run("gen-data --env reach3d --episodes 100 --seed 0 --out " + path("b.jsonl")).code, 0);
  EXPECT_EQ(gcdt::oracle::read_file(path("a.jsonl")), gcdt::oracle::read_file(path("b.jsonl")));
  EXPECT_EQ(gcdt::oracle::read_file(path("a.tasks.json")), gcdt::oracle::read_file(path("b.tasks.json")));
  EXPECT_EQ(run("gen-data --env reach3d --episodes 2 --seed 0 --out /nonexistent-dir/x.jsonl").code, 2);
}

TEST_F(Cli, AugmentCountsAndGuards) {
  ASSERT_EQ(run("gen-data --env pickplace3d --episodes 10 --seed 3 --out " + path("d.jsonl")).code, 0);
  std::size_t total_steps = 0;
  {
    std::istringstream in(gcdt::oracle::read_file(path("d.jsonl")));
    for (std::string line; std::getline(in, line);) total_steps += nlohmann::json::parse(line)["obs"].size();
  }
  const Outcome r = run("augment --in " + path("d.jsonl") + " --out " + path("aug.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(gcdt::oracle::read_file(path("aug.jsonl"))), 10u + total_steps);
  const Outcome again = run("augment --in " + path("aug.jsonl") + " --out " + path("aug2.jsonl"));
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("relabeled"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(path("aug2.jsonl")));

  gcdt::oracle::write_file(path("empty.jsonl"), "");
  std::filesystem::copy_file(path("d.tasks.json"), path("empty.tasks.json"));
  ASSERT_EQ(run("augment --in " + path("empty.jsonl") + " --out " + path("empty_aug.jsonl")).code, 0);
  EXPECT_EQ(gcdt::oracle::read_file(path("empty_aug.jsonl")), "");
}

TEST_F(Cli, ConfigErrorsNameKeyAndLine) {
  ASSERT_EQ(run("gen-data --env reach3d --episodes 3 --seed 0 --out " + path("d.jsonl")).code, 0);
  gcdt::oracle::write_file(path("bad.cfg"), "mode = pretrain\ntasks = reach3d\ndata.reach3d = d.jsonl\nlearning_rate = 1\n");
  const Outcome r = run("pretrain --config " + path("bad.cfg"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("line 4"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST_F(Cli, PretrainFinetuneEvalInspectPipeline) {
  ASSERT_EQ(run("gen-data --env reach3d --episodes 4 --seed 0 --out " + path("reach.jsonl")).code, 0);
  ASSERT_EQ(run("gen-data --env bireach3d --episodes 4 --seed 0 --out " + path("bi.jsonl")).code, 0);
  const std::string arch = "n_layers = 1\nn_heads = 2\nd_model = 16\nmax_timesteps = 8\nbatch_size = 4\n";
  gcdt::oracle::write_file(path("pre.cfg"), "mode = pretrain\ntasks = reach3d, bireach3d\ndata.reach3d = reach.jsonl\n"
                                            "data.bireach3d = bi.jsonl\nsteps = 3\nout = pre.gcdt\nlog = pre.log\n" + arch);
  const Outcome pre = run("pretrain --config " + path("pre.cfg"));
  ASSERT_EQ(pre.code, 0) << pre.err;
  EXPECT_EQ(lines(gcdt::oracle::read_file(path("pre.log"))), 3u);

  gcdt::oracle::write_file(path("ft.cfg"),
                           "mode = finetune\ntasks = reach3d\ndata.reach3d = reach.jsonl\nsteps = 2\nout = ft.gcdt\n" + arch);
  const Outcome ft = run("finetune --config " + path("ft.cfg") + " --init " + path("pre.gcdt"));
  ASSERT_EQ(ft.code, 0) << ft.err;
  EXPECT_EQ(ft.out.find("freshly initialized"), std::string::npos);
  EXPECT_EQ(run("pretrain --config " + path("ft.cfg")).code, 1);

  const Outcome ev = run("eval --ckpt " + path("ft.gcdt") + " --env reach3d --episodes 3 --seeds 0,1,2,3,4");
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto j = nlohmann::json::parse(ev.out);
  EXPECT_EQ(j["per_seed_rates"].size(), 5u);
  EXPECT_EQ(j["episodes"], 3);
  ASSERT_EQ(run("eval --ckpt " + path("ft.gcdt") + " --env reach3d --episodes 3 --seeds 0,1 --out " + path("r.json")).code, 0);
  EXPECT_EQ(nlohmann::json::parse(gcdt::oracle::read_file(path("r.json")))["per_seed_rates"].size(), 2u);
  EXPECT_EQ(run("eval --ckpt " + path("ft.gcdt") + " --env bireach3d --episodes 3").code, 1);

  const Outcome ins = run("inspect --ckpt " + path("pre.gcdt"));
  ASSERT_EQ(ins.code, 0) << ins.err;
  EXPECT_NE(ins.out.find("(match)"), std::string::npos);
  EXPECT_NE(ins.out.find("bireach3d: obs_dim 8"), std::string::npos);

  gcdt::oracle::write_file(path("junk.gcdt"), "GCDT not really");
  EXPECT_EQ(run("inspect --ckpt " + path("junk.gcdt")).code, 2);
}

TEST_F(Cli, InspectFullSizeCheckpointMatchesClosedForm) {
  ASSERT_EQ(run("gen-data --env reach3d --episodes 2 --seed 0 --out " + path("reach.jsonl")).code, 0);
  gcdt::oracle::write_file(path("big.cfg"), "mode = pretrain\ntasks = reach3d\ndata.reach3d = reach.jsonl\nsteps = 1\n"
                                            "batch_size = 1\nn_layers = 8\nn_heads = 4\nd_model = 128\nout = big.gcdt\n");
  ASSERT_EQ(run("pretrain --config " + path("big.cfg")).code, 0);
  const Outcome ins = run("inspect --ckpt " + path("big.gcdt"));
  ASSERT_EQ(ins.code, 0);
  gcdt::model::ModelConfig c;  // 8 layers, 4 heads, 128 wide
  gcdt::data::TaskSpec reach;
  reach.obs_dim = 4;
  reach.goal_dim = 3;
  reach.act_dim = 4;
  const std::size_t expected = gcdt::model::backbone_parameter_count(c) + gcdt::model::adapter_parameter_count(c, reach);
  EXPECT_NE(ins.out.find("total parameters: " + std::to_string(expected) + "\n"), std::string::npos) << ins.out;
}
