#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gcdt/data/normalization.h"
#include "gcdt/data/sampling.h"
#include "gcdt/model/model.h"
#include "gcdt/numerics/adamw.h"

namespace gcdt::objectives {

enum class ObjectiveKind { kActionPrediction = 0, kForwardDynamics = 1, kTimeToGoal = 2, kSequenceReconstruction = 3 };

/// Round-robin order used by pretraining.
inline constexpr std::array<ObjectiveKind, 4> kObjectiveOrder = {
    ObjectiveKind::kActionPrediction, ObjectiveKind::kForwardDynamics, ObjectiveKind::kTimeToGoal,
    ObjectiveKind::kSequenceReconstruction};

const char* to_string(ObjectiveKind kind);

struct LossWeights {
  std::array<double, 4> values{1.0, 1.0, 1.0, 1.0};

  double& operator[](ObjectiveKind k) { return values[static_cast<std::size_t>(k)]; }
  double operator[](ObjectiveKind k) const { return values[static_cast<std::size_t>(k)]; }
  /// Throws std::invalid_argument on a negative weight or all-zero weights.
  void validate() const;
  static LossWeights action_only();
};

/// Supervision for one item type. Row i of `values` is predicted by the
/// head applied to hidden row `read_rows[i]` and stands for the item at
/// token row `target_tokens[i]`.
struct TargetSet {
  model::ItemType item = model::ItemType::kAction;
  std::vector<std::uint32_t> read_rows;
  std::vector<std::uint32_t> target_tokens;
  std::vector<float> values;
};

struct TrainingBatch {
  ObjectiveKind kind = ObjectiveKind::kActionPrediction;
  model::SequenceBatch inputs;
  std::vector<TargetSet> targets;
  /// One flag per token: set when that item is a supervised target.
  std::vector<std::uint8_t> loss_mask;

  std::size_t target_count() const;
};

struct BatchOptions {
  std::size_t batch_size = 64;
  std::size_t max_timesteps = 100;
  /// Per-item masking probability of the reconstruction objective, in (0, 1).
  double mask_ratio = 0.15;
};

/// Normalized model inputs for a set of windows of one task, with no masks.
model::SequenceBatch make_sequence_batch(std::span<const data::Window> windows, const data::TaskSpec& spec,
                                         const data::TaskNormStats& norm);

/// Applies the objective's mask plan to `inputs` and collects its targets:
///   ActionPrediction        no masks; a_t for every t, read at o_t
///   ForwardDynamics         T and g masked; o_t for t >= 2, read at a_{t-1}
///   TimeToGoal              T masked; T_t for t >= 2, read at a_{t-1}
///   SequenceReconstruction  each item masked with probability mask_ratio;
///                           every masked item, read at its own token
/// Action targets are raw actions (the action head is tanh-squashed); the
/// others are in normalized units.
TrainingBatch make_training_batch(model::SequenceBatch inputs, std::span<const data::Window> windows,
                                  const data::TaskNormStats& norm, ObjectiveKind kind, num::Pcg32& rng,
                                  double mask_ratio);

/// Samples `batch_size` windows and builds the objective's batch. Throws
/// std::invalid_argument on batch_size < 1 or a mask ratio outside (0, 1).
TrainingBatch build_batch(const data::WindowSampler& sampler, const data::TaskSpec& spec,
                          const data::TaskNormStats& norm, num::Pcg32& rng, ObjectiveKind kind,
                          const BatchOptions& options);

/// Mean squared error over the rows of `pred` whose `include` flag is set
/// (all rows when `include` is empty). Zero when nothing is included.
model::Var compute_loss(model::Tape& tape, model::Var pred, std::span<const float> target,
                        std::span<const std::uint8_t> include = {});

/// Encodes the batch and returns the objective's MSE over all target
/// components (zero constant when the batch has no targets).
model::Var objective_loss(model::Tape& tape, const model::ModelBundle& model, const TrainingBatch& batch,
                          num::Pcg32* dropout_rng);

/// Training data of one task: augmented trajectories and a window sampler.
struct TaskData {
  TaskData(data::TaskSpec spec, data::Dataset dataset, std::size_t max_timesteps);
  TaskData(const TaskData&) = delete;
  TaskData& operator=(const TaskData&) = delete;

  data::TaskSpec spec;
  data::Dataset dataset;
  data::WindowSampler sampler;
};

/// Picks a task with probability proportional to its number of training
/// trajectories.
std::size_t sample_task(std::span<const std::unique_ptr<TaskData>> tasks, num::Pcg32& rng);

struct StepOptions {
  BatchOptions batch;
  double grad_clip = 1.0;
  double lr_scale = 1.0;
  bool dropout = true;
};

/// Loss per objective for one cycle; empty when the objective was skipped.
using StepLosses = std::array<std::optional<double>, 4>;

/// One cycle: for each objective with positive weight, in round-robin
/// order, sample a task, build a batch, backpropagate the weighted loss,
/// clip, and take one AdamW step over the parameters the batch touched.
StepLosses pretraining_step(model::ModelBundle& model, std::span<const std::unique_ptr<TaskData>> tasks,
                            num::AdamWState<float>& optimizer, num::Pcg32& rng, const LossWeights& weights,
                            const StepOptions& options);

}  // namespace gcdt::objectives
