#include "gcdt/model/objectives.h"

#include <algorithm>
#include <stdexcept>

namespace gcdt::objectives {

using model::ItemType;

const char* to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kActionPrediction: return "action";
    case ObjectiveKind::kForwardDynamics: return "dynamics";
    case ObjectiveKind::kTimeToGoal: return "time_to_goal";
    case ObjectiveKind::kSequenceReconstruction: return "reconstruction";
  }
  return "?";
}

void LossWeights::validate() const {
  bool any = false;
  for (double w : values) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
    any = any || w > 0.0;
  }
  if (!any) throw std::invalid_argument("at least one loss weight must be positive");
}

LossWeights LossWeights::action_only() { return LossWeights{{1.0, 0.0, 0.0, 0.0}}; }

std::size_t TrainingBatch::target_count() const {
  std::size_t n = 0;
  for (const auto& t : targets) n += t.read_rows.size();
  return n;
}

// ---------------------------------------------------------------------------

model::SequenceBatch make_sequence_batch(std::span<const data::Window> windows, const data::TaskSpec& spec,
                                         const data::TaskNormStats& norm) {
  if (windows.empty()) throw std::invalid_argument("make_sequence_batch: no windows");
  std::size_t steps = 0;
  for (const auto& w : windows) steps = std::max(steps, w.length());
  auto batch = model::SequenceBatch::zeros(spec, windows.size(), steps);
  auto put = [](std::vector<float>& dst, std::size_t row, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) dst[row * v.size() + j] = static_cast<float>(v[j]);
  };
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const data::Window& w = windows[b];
    const data::Trajectory& tr = *w.trajectory;
    if (tr.task_id != spec.task_id) throw std::invalid_argument("make_sequence_batch: mixed tasks in one batch");
    batch.lengths[b] = w.length();
    const auto g = norm.goal.normalize(tr.goal);
    for (std::size_t i = 0; i < w.length(); ++i) {
      const std::size_t t = w.timestep(i);
      const std::size_t row = b * steps + i;
      batch.time_to_goal[row] = static_cast<float>(static_cast<double>(tr.time_to_goal(t)) / norm.time_to_goal_scale);
      put(batch.goal, row, g);
      put(batch.obs, row, norm.obs.normalize(tr.observations[t - 1]));
      put(batch.act, row, norm.act.normalize(tr.actions[t - 1]));
    }
  }
  return batch;
}

TrainingBatch make_training_batch(model::SequenceBatch inputs, std::span<const data::Window> windows,
                                  const data::TaskNormStats& norm, ObjectiveKind kind, num::Pcg32& rng,
                                  double mask_ratio) {
  if (kind == ObjectiveKind::kSequenceReconstruction && !(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw std::invalid_argument("reconstruction mask ratio must lie in (0, 1), got " + std::to_string(mask_ratio));
  TrainingBatch out;
  out.kind = kind;
  out.loss_mask.assign(inputs.masked.size(), 0);
  std::array<TargetSet, 4> sets;
  for (ItemType item : model::kItemTypes) sets[static_cast<std::size_t>(item)].item = item;

  auto add_target = [&](ItemType item, std::size_t b, std::size_t t, std::uint32_t read_row) {
    const data::Trajectory& tr = *windows[b].trajectory;
    const std::size_t abs_t = windows[b].timestep(t - 1);
    TargetSet& set = sets[static_cast<std::size_t>(item)];
    const std::uint32_t token = inputs.token_row(b, t, item);
    set.read_rows.push_back(read_row);
    set.target_tokens.push_back(token);
    out.loss_mask[token] = 1;
    std::vector<double> v;
    switch (item) {
      case ItemType::kTimeToGoal:
        v = {static_cast<double>(tr.time_to_goal(abs_t)) / norm.time_to_goal_scale};
        break;
      case ItemType::kGoal: v = norm.goal.normalize(tr.goal); break;
      case ItemType::kObservation: v = norm.obs.normalize(tr.observations[abs_t - 1]); break;
      case ItemType::kAction: v = tr.actions[abs_t - 1]; break;
    }
    for (double x : v) set.values.push_back(static_cast<float>(x));
  };

  for (std::size_t b = 0; b < inputs.batch; ++b) {
    const std::size_t len = inputs.lengths[b];
    for (std::size_t t = 1; t <= len; ++t) {
      switch (kind) {
        case ObjectiveKind::kActionPrediction:
          add_target(ItemType::kAction, b, t, inputs.token_row(b, t, ItemType::kObservation));
          break;
        case ObjectiveKind::kForwardDynamics:
          inputs.set_mask(b, t, ItemType::kTimeToGoal, true);
          inputs.set_mask(b, t, ItemType::kGoal, true);
          if (t >= 2) add_target(ItemType::kObservation, b, t, inputs.token_row(b, t - 1, ItemType::kAction));
          break;
        case ObjectiveKind::kTimeToGoal:
          inputs.set_mask(b, t, ItemType::kTimeToGoal, true);
          if (t >= 2) add_target(ItemType::kTimeToGoal, b, t, inputs.token_row(b, t - 1, ItemType::kAction));
          break;
        case ObjectiveKind::kSequenceReconstruction:
          for (ItemType item : model::kItemTypes) {
            if (!rng.bernoulli(mask_ratio)) continue;
            inputs.set_mask(b, t, item, true);
            add_target(item, b, t, inputs.token_row(b, t, item));
          }
          break;
      }
    }
  }
  out.inputs = std::move(inputs);
  for (auto& s : sets)
    if (!s.read_rows.empty()) out.targets.push_back(std::move(s));
  return out;
}

TrainingBatch build_batch(const data::WindowSampler& sampler, const data::TaskSpec& spec,
                          const data::TaskNormStats& norm, num::Pcg32& rng, ObjectiveKind kind,
                          const BatchOptions& options) {
  if (options.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (kind == ObjectiveKind::kSequenceReconstruction && !(options.mask_ratio > 0.0 && options.mask_ratio < 1.0))
    throw std::invalid_argument("reconstruction mask ratio must lie in (0, 1), got " +
                                std::to_string(options.mask_ratio));
  std::vector<data::Window> windows;
  windows.reserve(options.batch_size);
  for (std::size_t i = 0; i < options.batch_size; ++i) windows.push_back(sampler.sample(rng));
  auto inputs = make_sequence_batch(windows, spec, norm);
  return make_training_batch(std::move(inputs), windows, norm, kind, rng, options.mask_ratio);
}

// ---------------------------------------------------------------------------

namespace {

struct SquaredError {
  model::Var total;
  std::size_t components = 0;
};

SquaredError squared_error(model::Tape& tape, model::Var pred, std::span<const float> target,
                           std::span<const std::uint8_t> include) {
  const num::Shape shape = tape.shape(pred);
  if (tape.value(pred).numel() != target.size())
    throw num::ShapeError("loss: prediction " + num::to_string(shape) + " vs " + std::to_string(target.size()) +
                          " target values");
  const std::size_t dim = shape.back(), rows = target.size() / dim;
  if (!include.empty() && include.size() != rows)
    throw num::ShapeError("loss: include mask has " + std::to_string(include.size()) + " entries for " +
                          std::to_string(rows) + " rows");
  model::Var diff = tape.sub(pred, tape.constant(num::Tensor<float>(shape, num::Storage<float>(target.begin(), target.end()))));
  std::size_t included = rows;
  if (!include.empty()) {
    included = static_cast<std::size_t>(std::count_if(include.begin(), include.end(), [](auto f) { return f != 0; }));
    if (included < rows) {
      std::vector<float> w(rows * dim);
      for (std::size_t r = 0; r < rows; ++r)
        std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(r * dim), dim, include[r] ? 1.0f : 0.0f);
      diff = tape.mul(diff, tape.constant(num::Tensor<float>(shape, std::move(w))));
    }
  }
  return {tape.sum(tape.mul(diff, diff)), included * dim};
}

model::Var zero(model::Tape& tape) { return tape.constant(num::Tensor<float>(num::Shape{1}, 0.0f)); }

}  // namespace

model::Var compute_loss(model::Tape& tape, model::Var pred, std::span<const float> target,
                        std::span<const std::uint8_t> include) {
  const SquaredError se = squared_error(tape, pred, target, include);
  if (se.components == 0) return zero(tape);
  return tape.scale(se.total, 1.0f / static_cast<float>(se.components));
}

model::Var objective_loss(model::Tape& tape, const model::ModelBundle& model, const TrainingBatch& batch,
                          num::Pcg32* dropout_rng) {
  if (batch.target_count() == 0) return zero(tape);
  const model::Var hidden = model.encode(tape, batch.inputs, dropout_rng);
  model::Var total;
  std::size_t components = 0;
  for (const TargetSet& set : batch.targets) {
    const model::Var pred = model.head(tape, hidden, batch.inputs.task_id, set.item, set.read_rows);
    const SquaredError se = squared_error(tape, pred, set.values, {});
    total = total.valid() ? tape.add(total, se.total) : se.total;
    components += se.components;
  }
  return tape.scale(total, 1.0f / static_cast<float>(components));
}

// ---------------------------------------------------------------------------

TaskData::TaskData(data::TaskSpec s, data::Dataset d, std::size_t max_timesteps)
    : spec(std::move(s)), dataset(std::move(d)), sampler(dataset, max_timesteps) {}

std::size_t sample_task(std::span<const std::unique_ptr<TaskData>> tasks, num::Pcg32& rng) {
  if (tasks.empty()) throw std::invalid_argument("sample_task: no tasks");
  std::size_t total = 0;
  for (const auto& t : tasks) total += t->dataset.size();
  auto u = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint32_t>(total)));
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (u < tasks[i]->dataset.size()) return i;
    u -= tasks[i]->dataset.size();
  }
  return tasks.size() - 1;
}

StepLosses pretraining_step(model::ModelBundle& model, std::span<const std::unique_ptr<TaskData>> tasks,
                            num::AdamWState<float>& optimizer, num::Pcg32& rng, const LossWeights& weights,
                            const StepOptions& options) {
  weights.validate();
  StepLosses losses;
  auto params = model.parameters();
  for (ObjectiveKind kind : kObjectiveOrder) {
    const double w = weights[kind];
    if (w <= 0.0) continue;
    const TaskData& task = *tasks[sample_task(tasks, rng)];
    const TrainingBatch batch =
        build_batch(task.sampler, task.spec, model.norm_stats(task.spec.task_id), rng, kind, options.batch);
    for (auto* p : params) p->zero_grad();
    model::Tape tape;
    const model::Var loss = objective_loss(tape, model, batch, options.dropout ? &rng : nullptr);
    losses[static_cast<std::size_t>(kind)] = tape.value(loss).item();
    if (!tape.requires_grad(loss)) continue;
    tape.backward(tape.scale(loss, static_cast<float>(w)));
    num::clip_grad_norm<float>(params, options.grad_clip);
    num::adamw_step<float>(params, optimizer, true, options.lr_scale);
  }
  return losses;
}

}  // namespace gcdt::objectives
