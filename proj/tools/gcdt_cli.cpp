#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gcdt/data/dataset_io.h"
#include "gcdt/data/relabel.h"
#include "gcdt/env/env.h"
#include "gcdt/eval/rollout.h"
#include "gcdt/train/checkpoint.h"
#include "gcdt/train/trainer.h"

namespace fs = std::filesystem;
using namespace gcdt;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Input problems detected before any side effect.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_string(const num::Shape& s) { return num::to_string(s); }

void print_config_keys(std::ostream& os) {
  os << "\nConfig file keys (flat 'key = value', '#' comments; unknown keys are errors):\n";
  for (const auto& [key, doc] : train::config_keys()) os << "  " << std::left << std::setw(24) << key << doc << "\n";
}

int cmd_gen_data(const std::string& env_name, std::size_t episodes, std::uint64_t seed, const fs::path& out) {
  const env::DemoReport r = env::generate_demos(env_name, episodes, seed, out);
  std::cout << "wrote " << r.written << " trajectories to " << out.string() << " (+ "
            << data::sidecar_path(out).string() << ")\n"
            << "episode length: mean " << r.mean_length << ", min " << r.min_length << ", max " << r.max_length
            << "\nfailed expert episodes re-drawn: " << r.redrawn << "\n";
  return 0;
}

int cmd_augment(const fs::path& in, const fs::path& out) {
  const data::TaskRegistry tasks = data::load_task_registry(data::sidecar_path(in));
  const data::Dataset d = data::load_dataset(in, tasks);
  if (d.count(data::Provenance::kRelabeled) > 0)
    throw UsageError("'" + in.string() + "' already contains relabeled trajectories; augment expects original demos");
  const data::Dataset aug = data::hindsight_relabel(d);
  data::save_dataset(out, aug, tasks);
  std::cout << "wrote " << aug.size() << " trajectories (" << d.size() << " original, "
            << aug.count(data::Provenance::kRelabeled) << " relabeled) to " << out.string() << "\n";
  return 0;
}

int cmd_train(train::TrainMode mode, const fs::path& config_path, const fs::path& init) {
  train::TrainConfig config = train::load_train_config(config_path);
  if (config.mode != mode)
    throw UsageError(std::string("config '") + config_path.string() + "' sets mode = " +
                     (config.mode == train::TrainMode::kPretrain ? "pretrain" : "finetune"));
  if (!init.empty()) config.init = init;
  config.validate();
  if (config.out.empty()) throw UsageError("config has no 'out' checkpoint path");
  const train::TrainResult r = train::run_training(config, [&](const train::LogRecord& rec, const model::ModelBundle&) {
    if (rec.step == 1 || rec.step % 100 == 0 || rec.step == config.steps) std::cerr << rec.to_json() << "\n";
    return true;
  });
  for (const auto& t : r.fresh_adapters) std::cout << "freshly initialized adapters: " << t << "\n";
  std::cout << "trained " << r.log.size() << " steps, " << r.model.parameter_count() << " parameters; checkpoint "
            << config.out.string() << "\n";
  return 0;
}

int cmd_eval(const fs::path& ckpt, const std::string& env_name, std::size_t episodes,
             const std::vector<std::uint64_t>& seeds, const fs::path& out) {
  const model::ModelBundle bundle = train::load_checkpoint(ckpt);
  if (!bundle.has_task(env_name))
    throw UsageError("checkpoint '" + ckpt.string() + "' has no adapters for task '" + env_name + "'");
  const eval::EvalReport rep = eval::evaluate(env_name, bundle, episodes, seeds);
  const std::string json = rep.to_json() + "\n";
  if (out.empty()) std::cout << json;
  else data::write_file_atomic(out, json);
  return 0;
}

int cmd_inspect(const fs::path& ckpt) {
  const train::CheckpointInfo info = train::read_checkpoint_info(ckpt);
  const model::ModelConfig& c = info.config;
  std::cout << "checkpoint " << ckpt.string() << " (format version " << info.version << ")\n"
            << "architecture: n_layers " << c.n_layers << ", n_heads " << c.n_heads << ", d_model " << c.d_model
            << ", max_timesteps " << c.max_timesteps << ", dropout " << c.dropout << "\n"
            << "init seed: " << info.seed << "\n\ntasks:\n";
  for (const auto& [id, s] : info.tasks)
    std::cout << "  " << id << ": obs_dim " << s.obs_dim << ", goal_dim " << s.goal_dim << ", act_dim " << s.act_dim
              << ", max_episode_steps " << s.max_episode_steps << ", expected_steps " << s.expected_steps
              << ", success_threshold " << s.success_threshold << "\n";
  std::cout << "\nmanifest:\n";
  std::size_t total = 0, backbone = 0;
  std::map<std::string, std::size_t> per_task;
  for (const auto& e : info.manifest) {
    const std::size_t n = num::numel(e.shape);
    total += n;
    if (e.name.rfind("backbone.", 0) == 0) {
      backbone += n;
    } else {
      const auto first = e.name.find('.') + 1;
      per_task[e.name.substr(first, e.name.find('.', first) - first)] += n;
    }
    std::cout << "  " << std::left << std::setw(48) << e.name << std::setw(14) << shape_string(e.shape) << n << "\n";
  }
  std::size_t closed_form = model::backbone_parameter_count(c);
  std::cout << "\nbackbone parameters: " << backbone << "\n";
  for (const auto& [id, n] : per_task) {
    std::cout << "task " << id << " adapter parameters: " << n << "\n";
    closed_form += model::adapter_parameter_count(c, info.tasks.at(id));
  }
  std::cout << "total parameters: " << total << "\nclosed-form count: " << closed_form
            << (closed_form == total ? " (match)" : " (MISMATCH)") << "\n";
  return closed_form == total ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  num::tune_allocator();
  CLI::App app{"Goal-conditioned decision transformer toolkit"};
  app.require_subcommand(1);

  std::string env_name;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  fs::path out, in, config, init, ckpt;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};

  auto* gen = app.add_subcommand("gen-data", "Roll the scripted expert and write successful demonstrations");
  gen->add_option("--env", env_name, "Environment name")->required()->check(CLI::IsMember(env::env_names()));
  gen->add_option("--episodes", episodes, "Number of successful episodes to write")
      ->required()
      ->check(CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max()));
  gen->add_option("--seed", seed, "Base seed")->required();
  gen->add_option("--out", out, "Output JSON-Lines path; the task sidecar is written next to it")->required();

  auto* aug = app.add_subcommand("augment", "Hindsight-relabel a file of original demonstrations");
  aug->add_option("--in", in, "Input dataset")->required()->check(CLI::ExistingFile);
  aug->add_option("--out", out, "Output dataset")->required();

  auto* pre = app.add_subcommand("pretrain", "Cross-task pretraining from a config file");
  pre->add_option("--config", config, "Training config file")->required()->check(CLI::ExistingFile);
  auto* fin = app.add_subcommand("finetune", "Action-only training of one task from a config file");
  fin->add_option("--config", config, "Training config file")->required()->check(CLI::ExistingFile);
  fin->add_option("--init", init, "Checkpoint to start from (overrides the config's init key)")
      ->check(CLI::ExistingFile);
  for (auto* sub : {pre, fin}) sub->footer([] {
      std::ostringstream os;
      print_config_keys(os);
      return os.str();
    });

  auto* ev = app.add_subcommand("eval", "Success-rate evaluation of a checkpoint");
  ev->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--env", env_name, "Environment name")->required()->check(CLI::IsMember(env::env_names()));
  ev->add_option("--episodes", episodes, "Episodes per seed")->capture_default_str()->check(CLI::Range(std::size_t{1}, std::numeric_limits<std::size_t>::max()));
  ev->add_option("--seeds", seeds, "Comma-separated evaluation seeds")->delimiter(',')->capture_default_str();
  ev->add_option("--out", out, "Write the report here instead of stdout");

  auto* ins = app.add_subcommand("inspect", "Print a checkpoint's manifest, task specs and parameter totals");
  ins->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(env_name, episodes, seed, out);
    if (*aug) return cmd_augment(in, out);
    if (*pre) return cmd_train(train::TrainMode::kPretrain, config, {});
    if (*fin) return cmd_train(train::TrainMode::kFinetune, config, init);
    if (*ev) return cmd_eval(ckpt, env_name, episodes, seeds, out);
    if (*ins) return cmd_inspect(ckpt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const train::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
