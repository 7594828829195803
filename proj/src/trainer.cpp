#include "gcdt/train/trainer.h"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "gcdt/data/dataset_io.h"
#include "gcdt/data/normalization.h"
#include "gcdt/data/relabel.h"
#include "gcdt/env/env.h"
#include "gcdt/eval/rollout.h"
#include "gcdt/train/checkpoint.h"

namespace gcdt::train {

namespace obj = objectives;

// ---- config ---------------------------------------------------------------

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"mode", "pretrain | finetune"},
      {"tasks", "comma-separated task ids (finetune: exactly one)"},
      {"data.<task>", "dataset path of <task> (JSON-Lines with a .tasks.json sidecar)"},
      {"steps", "training steps; a pretraining step is one round-robin cycle over the objectives"},
      {"batch_size", "sequences per batch (default 64)"},
      {"max_timesteps", "K, timesteps per context window (default 100)"},
      {"n_layers", "transformer blocks (default 8)"},
      {"n_heads", "attention heads (default 4)"},
      {"d_model", "embedding width (default 128)"},
      {"dropout", "dropout rate during training (default 0.1)"},
      {"lr", "AdamW learning rate (default 1e-4)"},
      {"weight_decay", "AdamW decoupled weight decay (default 1e-4)"},
      {"beta1", "AdamW first-moment decay (default 0.9)"},
      {"beta2", "AdamW second-moment decay (default 0.999)"},
      {"epsilon", "AdamW epsilon (default 1e-8)"},
      {"grad_clip", "global gradient-norm clip (default 1.0)"},
      {"warmup_steps", "linear learning-rate warmup steps, 0 = none (default 0)"},
      {"cosine_decay", "decay the learning rate to zero along a cosine after warmup: true | false (default false)"},
      {"mask_ratio", "per-item masking probability of the reconstruction objective (default 0.15)"},
      {"weight.action", "action prediction loss weight (default 1)"},
      {"weight.dynamics", "forward dynamics loss weight (default 1)"},
      {"weight.time_to_goal", "time-to-goal loss weight (default 1)"},
      {"weight.reconstruction", "sequence reconstruction loss weight (default 1)"},
      {"augment", "relabel datasets that hold only original demos: true | false (default true)"},
      {"eval_every", "steps between periodic evaluations, 0 = never (default 0)"},
      {"eval_episodes", "episodes per periodic evaluation (default 20)"},
      {"seed", "seed for initialization, sampling and dropout (default 0)"},
      {"out", "checkpoint output path"},
      {"log", "JSON-Lines training log path"},
      {"init", "finetune only: checkpoint to start from"},
  };
  return keys;
}

namespace {

double lr_scale(const TrainConfig& config, std::size_t step) {
  if (step <= config.warmup_steps)
    return static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  if (!config.cosine_decay) return 1.0;
  const double span = static_cast<double>(config.steps - config.warmup_steps);
  const double progress = static_cast<double>(step - 1 - config.warmup_steps) / span;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct LineContext {
  std::string key;
  std::size_t line;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line) + ": key '" + key + "': " + msg);
  }
};

template <typename U>
U parse_number(const std::string& v, const LineContext& ctx) {
  U out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) ctx.fail("'" + v + "' is not a valid number");
  return out;
}

double parse_real(const std::string& v, const LineContext& ctx) {
  const double x = parse_number<double>(v, ctx);
  if (!std::isfinite(x)) ctx.fail("value must be finite");
  return x;
}

bool parse_bool(const std::string& v, const LineContext& ctx) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  ctx.fail("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& v) {
  const std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

TrainConfig parse_train_config(std::string_view text, const std::filesystem::path& base_dir) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    const LineContext ctx{trim(std::string_view(line).substr(0, eq)), line_no};
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (ctx.key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (value.empty()) ctx.fail("missing value");
    if (!c.explicit_keys.insert(ctx.key).second) ctx.fail("duplicate key");
    const std::string& k = ctx.key;
    auto size = [&] { return parse_number<std::size_t>(value, ctx); };
    if (k == "mode") {
      if (value == "pretrain") c.mode = TrainMode::kPretrain;
      else if (value == "finetune") c.mode = TrainMode::kFinetune;
      else ctx.fail("expected pretrain or finetune, got '" + value + "'");
    } else if (k == "tasks") {
      c.tasks = split_list(value);
    } else if (k.rfind("data.", 0) == 0 && k.size() > 5) {
      c.data[k.substr(5)] = resolve(base_dir, value);
    } else if (k == "steps") {
      c.steps = size();
    } else if (k == "batch_size") {
      c.batch_size = size();
    } else if (k == "max_timesteps") {
      c.model.max_timesteps = size();
    } else if (k == "n_layers") {
      c.model.n_layers = size();
    } else if (k == "n_heads") {
      c.model.n_heads = size();
    } else if (k == "d_model") {
      c.model.d_model = size();
    } else if (k == "dropout") {
      c.model.dropout = parse_real(value, ctx);
    } else if (k == "lr") {
      c.optimizer.lr = parse_real(value, ctx);
    } else if (k == "weight_decay") {
      c.optimizer.weight_decay = parse_real(value, ctx);
    } else if (k == "beta1") {
      c.optimizer.beta1 = parse_real(value, ctx);
    } else if (k == "beta2") {
      c.optimizer.beta2 = parse_real(value, ctx);
    } else if (k == "epsilon") {
      c.optimizer.epsilon = parse_real(value, ctx);
    } else if (k == "grad_clip") {
      c.grad_clip = parse_real(value, ctx);
    } else if (k == "warmup_steps") {
      c.warmup_steps = size();
    } else if (k == "cosine_decay") {
      c.cosine_decay = parse_bool(value, ctx);
    } else if (k == "mask_ratio") {
      c.mask_ratio = parse_real(value, ctx);
    } else if (k == "weight.action") {
      c.weights[obj::ObjectiveKind::kActionPrediction] = parse_real(value, ctx);
    } else if (k == "weight.dynamics") {
      c.weights[obj::ObjectiveKind::kForwardDynamics] = parse_real(value, ctx);
    } else if (k == "weight.time_to_goal") {
      c.weights[obj::ObjectiveKind::kTimeToGoal] = parse_real(value, ctx);
    } else if (k == "weight.reconstruction") {
      c.weights[obj::ObjectiveKind::kSequenceReconstruction] = parse_real(value, ctx);
    } else if (k == "augment") {
      c.augment = parse_bool(value, ctx);
    } else if (k == "eval_every") {
      c.eval_every = size();
    } else if (k == "eval_episodes") {
      c.eval_episodes = size();
    } else if (k == "seed") {
      c.seed = parse_number<std::uint64_t>(value, ctx);
    } else if (k == "out") {
      c.out = resolve(base_dir, value);
    } else if (k == "log") {
      c.log = resolve(base_dir, value);
    } else if (k == "init") {
      c.init = resolve(base_dir, value);
    } else {
      ctx.fail("unknown key");
    }
  }
  if (c.mode == TrainMode::kFinetune) {
    for (obj::ObjectiveKind kind : obj::kObjectiveOrder) {
      if (kind == obj::ObjectiveKind::kActionPrediction || c.weights[kind] <= 0.0) continue;
      const std::string key = std::string("weight.") + obj::to_string(kind);
      if (c.explicit_keys.count(key)) throw ConfigError("key '" + key + "': finetune trains the action objective only");
    }
    c.weights = obj::LossWeights::action_only();
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_train_config(ss.str(), path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void TrainConfig::validate() const {
  if (tasks.empty()) throw ConfigError("key 'tasks': at least one task is required");
  if (mode == TrainMode::kFinetune && tasks.size() != 1)
    throw ConfigError("key 'tasks': finetune targets exactly one task, got " + std::to_string(tasks.size()));
  if (mode == TrainMode::kPretrain && !init.empty()) throw ConfigError("key 'init': only valid in finetune mode");
  for (const auto& t : tasks) {
    if (std::count(tasks.begin(), tasks.end(), t) > 1) throw ConfigError("key 'tasks': '" + t + "' listed twice");
    if (!data.count(t)) throw ConfigError("missing dataset for task '" + t + "' (key 'data." + t + "')");
  }
  for (const auto& [t, _] : data)
    if (std::find(tasks.begin(), tasks.end(), t) == tasks.end())
      throw ConfigError("key 'data." + t + "': task is not listed in 'tasks'");
  if (steps == 0) throw ConfigError("key 'steps': must be >= 1");
  if (batch_size == 0) throw ConfigError("key 'batch_size': must be >= 1");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("key 'mask_ratio': must lie in (0, 1)");
  if (!(grad_clip > 0.0)) throw ConfigError("key 'grad_clip': must be positive");
  if (eval_every > 0 && eval_episodes == 0) throw ConfigError("key 'eval_episodes': must be >= 1");
  try {
    model.validate();
    weights.validate();
    optimizer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// ---- log ------------------------------------------------------------------

std::string LogRecord::to_json(bool with_wall_time) const {
  nlohmann::ordered_json j;
  j["step"] = step;
  for (obj::ObjectiveKind kind : obj::kObjectiveOrder)
    if (const auto& l = losses[static_cast<std::size_t>(kind)]) j[obj::to_string(kind)] = *l;
  if (with_wall_time) j["wall_time"] = wall_time;
  j["parameters"] = parameters;
  if (eval_success) j["eval_success"] = *eval_success;
  return j.dump();
}

// ---- data -----------------------------------------------------------------

std::size_t expected_steps_from(const data::Dataset& originals, const data::TaskSpec& spec) {
  std::size_t n = 0, total = 0;
  for (const auto& tr : originals.trajectories) {
    if (tr.provenance != data::Provenance::kOriginal) continue;
    ++n;
    total += tr.length();
  }
  if (n == 0) return spec.expected_steps;
  const auto e = static_cast<std::size_t>(std::ceil(static_cast<double>(total) / static_cast<double>(n)));
  return std::clamp<std::size_t>(e, 1, spec.max_episode_steps);
}

std::map<std::string, TaskInput> load_task_inputs(const TrainConfig& config) {
  std::map<std::string, TaskInput> out;
  for (const auto& task : config.tasks) {
    auto it = config.data.find(task);
    if (it == config.data.end()) throw ConfigError("missing dataset for task '" + task + "'");
    const auto registry = data::load_task_registry(data::sidecar_path(it->second));
    auto spec_it = registry.find(task);
    if (spec_it == registry.end())
      throw data::DatasetError("'" + data::sidecar_path(it->second).string() + "' has no spec for task '" + task + "'");
    data::Dataset d = data::load_dataset(it->second, registry).filter_task(task);
    if (d.empty()) throw data::DatasetError("dataset '" + it->second.string() + "' has no trajectories of '" + task + "'");
    TaskInput in{spec_it->second, {}};
    in.spec.expected_steps = expected_steps_from(d, in.spec);
    const bool has_relabeled = d.count(data::Provenance::kRelabeled) > 0;
    in.dataset = config.augment && !has_relabeled ? data::hindsight_relabel(d) : std::move(d);
    out.emplace(task, std::move(in));
  }
  return out;
}

// ---- training loop --------------------------------------------------------

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696e;  // "train"

const TaskInput& input_for(const std::map<std::string, TaskInput>& inputs, const std::string& task) {
  auto it = inputs.find(task);
  if (it == inputs.end()) throw ConfigError("missing dataset for task '" + task + "'");
  return it->second;
}

data::TaskNormStats norm_for(const TaskInput& in) {
  data::TaskRegistry reg{{in.spec.task_id, in.spec}};
  return data::compute_norm_stats(in.dataset, reg).at(in.spec.task_id);
}

std::optional<double> periodic_eval(const TrainConfig& config, const model::ModelBundle& model) {
  const auto known = env::env_names();
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& task : config.tasks) {
    if (std::find(known.begin(), known.end(), task) == known.end()) continue;
    sum += eval::evaluate(task, model, config.eval_episodes, {config.seed}).mean;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

void run_loop(const TrainConfig& config, model::ModelBundle& model, const std::map<std::string, TaskInput>& inputs,
              const obj::LossWeights& weights, TrainResult& result, const StepCallback& on_step) {
  std::vector<std::unique_ptr<obj::TaskData>> tasks;
  for (const auto& task : config.tasks) {
    const TaskInput& in = input_for(inputs, task);
    tasks.push_back(std::make_unique<obj::TaskData>(model.adapters(task).spec, in.dataset, model.config().max_timesteps));
  }
  num::AdamWState<float> optimizer;
  optimizer.options = config.optimizer;
  num::Pcg32 rng(num::mix_seed(config.seed, kTrainStream), kTrainStream);
  obj::StepOptions options;
  options.batch.batch_size = config.batch_size;
  options.batch.max_timesteps = model.config().max_timesteps;
  options.batch.mask_ratio = config.mask_ratio;
  options.grad_clip = config.grad_clip;
  options.dropout = model.config().dropout > 0.0;
  const std::size_t n_params = model.parameter_count();
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= config.steps; ++step) {
    options.lr_scale = lr_scale(config, step);
    LogRecord rec;
    rec.step = step;
    rec.losses = obj::pretraining_step(model, tasks, optimizer, rng, weights, options);
    rec.parameters = n_params;
    if (config.eval_every > 0 && step % config.eval_every == 0) rec.eval_success = periodic_eval(config, model);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(rec);
    if (on_step && !on_step(rec, model)) break;
  }
}

}  // namespace

TrainResult pretrain(const TrainConfig& config, const std::map<std::string, TaskInput>& inputs,
                     const StepCallback& on_step) {
  if (config.mode != TrainMode::kPretrain) throw ConfigError("pretrain called with a finetune config");
  config.validate();
  TrainResult result{model::ModelBundle(config.model, config.seed), {}, {}};
  for (const auto& task : config.tasks) {
    const TaskInput& in = input_for(inputs, task);
    result.model.add_task(in.spec);
    result.model.norm_stats()[task] = norm_for(in);
    result.fresh_adapters.push_back(task);
  }
  run_loop(config, result.model, inputs, config.weights, result, on_step);
  return result;
}

TrainResult finetune(const TrainConfig& config, const std::map<std::string, TaskInput>& inputs,
                     const model::ModelBundle* init, const StepCallback& on_step) {
  if (config.mode != TrainMode::kFinetune) throw ConfigError("finetune called with a pretrain config");
  config.validate();
  const std::string& task = config.tasks.front();
  const TaskInput& in = input_for(inputs, task);
  TrainResult result;
  if (init) {
    const model::ModelConfig& ic = init->config();
    auto check = [&](const char* key, std::size_t want, std::size_t have) {
      if (config.explicit_keys.count(key) && want != have)
        throw ConfigError(std::string("key '") + key + "': " + std::to_string(want) +
                          " conflicts with the init checkpoint's " + std::to_string(have));
    };
    check("n_layers", config.model.n_layers, ic.n_layers);
    check("n_heads", config.model.n_heads, ic.n_heads);
    check("d_model", config.model.d_model, ic.d_model);
    check("max_timesteps", config.model.max_timesteps, ic.max_timesteps);
    if (init->has_task(task)) {
      const data::TaskSpec& stored = init->adapters(task).spec;
      if (stored.obs_dim != in.spec.obs_dim || stored.goal_dim != in.spec.goal_dim || stored.act_dim != in.spec.act_dim)
        throw std::invalid_argument("task '" + task + "' dimensions (obs " + std::to_string(in.spec.obs_dim) +
                                    ", goal " + std::to_string(in.spec.goal_dim) + ", act " +
                                    std::to_string(in.spec.act_dim) + ") conflict with the checkpoint's (obs " +
                                    std::to_string(stored.obs_dim) + ", goal " + std::to_string(stored.goal_dim) +
                                    ", act " + std::to_string(stored.act_dim) + ")");
    }
    result.model = init->clone();
    result.model.set_dropout(config.model.dropout);
    for (const auto& id : result.model.task_ids()) {
      if (id == task) continue;
      result.model.remove_task(id);
      result.model.norm_stats().erase(id);
    }
  } else {
    result.model = model::ModelBundle(config.model, config.seed);
  }
  if (result.model.has_task(task) && result.model.norm_stats().count(task)) {
    result.model.adapters(task).spec.expected_steps = in.spec.expected_steps;
  } else {
    if (result.model.has_task(task)) result.model.remove_task(task);
    result.model.add_task(in.spec);
    result.model.norm_stats()[task] = norm_for(in);
    result.fresh_adapters.push_back(task);
  }
  run_loop(config, result.model, inputs, obj::LossWeights::action_only(), result, on_step);
  return result;
}

TrainResult run_training(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  std::optional<model::ModelBundle> init;
  if (!config.init.empty()) init = load_checkpoint(config.init);
  const auto inputs = load_task_inputs(config);
  std::ofstream log;
  std::filesystem::path log_tmp;
  if (!config.log.empty()) {
    log_tmp = config.log;
    log_tmp += ".tmp";
    log.open(log_tmp, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write log '" + config.log.string() + "'");
  }
  auto callback = [&](const LogRecord& rec, const model::ModelBundle& m) {
    if (log.is_open()) log << rec.to_json() << '\n' << std::flush;
    return on_step ? on_step(rec, m) : true;
  };
  TrainResult result = config.mode == TrainMode::kPretrain
                           ? pretrain(config, inputs, callback)
                           : finetune(config, inputs, init ? &*init : nullptr, callback);
  if (!config.out.empty()) save_checkpoint(result.model, config.out);
  if (log.is_open()) {
    log.close();
    std::filesystem::rename(log_tmp, config.log);
  }
  return result;
}

}  // namespace gcdt::train
