#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcdt/data/trajectory.h"
#include "gcdt/model/model.h"
#include "gcdt/model/objectives.h"
#include "gcdt/numerics/adamw.h"

namespace gcdt::train {

enum class TrainMode { kPretrain, kFinetune };

/// Raised for malformed config files; the message names the key and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  TrainMode mode = TrainMode::kPretrain;
  std::vector<std::string> tasks;
  /// Dataset path per task.
  std::map<std::string, std::filesystem::path> data;
  std::size_t steps = 2000;
  std::size_t batch_size = 64;
  model::ModelConfig model;
  objectives::LossWeights weights;
  num::AdamWOptions optimizer;
  double grad_clip = 1.0;
  /// Linear warmup length in steps; 0 disables it.
  std::size_t warmup_steps = 0;
  /// Cosine decay of the learning rate to zero over the post-warmup steps.
  bool cosine_decay = false;
  double mask_ratio = 0.15;
  /// Relabel datasets that contain only original demonstrations.
  bool augment = true;
  std::size_t eval_every = 0;
  std::size_t eval_episodes = 20;
  std::uint64_t seed = 0;
  std::filesystem::path out;
  std::filesystem::path log;
  std::filesystem::path init;
  /// Keys present in the parsed file.
  std::set<std::string> explicit_keys;

  /// Throws ConfigError on inconsistent settings (finetune with != 1 task,
  /// missing data paths, invalid model or weights).
  void validate() const;
};

/// Documented config keys with one-line descriptions, in file order.
const std::vector<std::pair<std::string, std::string>>& config_keys();

/// Parses flat `key = value` lines; '#' starts a comment. Unknown keys,
/// duplicates and malformed values raise ConfigError naming key and line.
/// Relative data/out/log/init paths resolve against `base_dir`.
TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir = {});
TrainConfig load_train_config(const std::filesystem::path& path);

/// One line of the JSON-Lines training log.
struct LogRecord {
  std::size_t step = 0;
  objectives::StepLosses losses;
  double wall_time = 0.0;
  std::size_t parameters = 0;
  /// Mean success rate of a periodic evaluation, when one ran at this step.
  std::optional<double> eval_success;

  std::string to_json(bool with_wall_time = true) const;
};

struct TrainResult {
  model::ModelBundle model;
  std::vector<LogRecord> log;
  /// Tasks whose adapters were created fresh instead of loaded.
  std::vector<std::string> fresh_adapters;
};

/// Called after every step; return false to stop early.
using StepCallback = std::function<bool(const LogRecord&, const model::ModelBundle&)>;

/// In-memory training inputs of one task: its spec (expected_steps taken
/// from the demonstrations) and the dataset as given.
struct TaskInput {
  data::TaskSpec spec;
  data::Dataset dataset;
};

/// Loads each task's dataset, relabeling it when `config.augment` is set
/// and the file holds only original demonstrations. Throws ConfigError for
/// a task without a data path.
std::map<std::string, TaskInput> load_task_inputs(const TrainConfig& config);

/// Expected steps per task: ceil of the mean length of its original demos.
std::size_t expected_steps_from(const data::Dataset& originals, const data::TaskSpec& spec);

/// Cross-task pretraining over every configured task.
TrainResult pretrain(const TrainConfig& config, const std::map<std::string, TaskInput>& inputs,
                     const StepCallback& on_step = {});

/// Action-only training of exactly one task, optionally starting from
/// `init`. Throws std::invalid_argument when the task's dimensions differ
/// from the spec stored in `init`.
TrainResult finetune(const TrainConfig& config, const std::map<std::string, TaskInput>& inputs,
                     const model::ModelBundle* init = nullptr, const StepCallback& on_step = {});

/// Loads inputs and the init checkpoint named by `config`, trains, and
/// writes the checkpoint and log files when their paths are set.
TrainResult run_training(const TrainConfig& config, const StepCallback& on_step = {});

}  // namespace gcdt::train
