#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gcdt/data/normalization.h"
#include "gcdt/data/trajectory.h"
#include "gcdt/numerics/tape.h"

namespace gcdt::model {

using Param = num::Parameter<float>;
using Tape = num::Tape<float>;
using num::Var;

/// The four items of a timestep group, in token order.
enum class ItemType : std::uint8_t { kTimeToGoal = 0, kGoal = 1, kObservation = 2, kAction = 3 };
inline constexpr std::size_t kTokensPerStep = 4;
inline constexpr std::array<ItemType, 4> kItemTypes = {ItemType::kTimeToGoal, ItemType::kGoal,
                                                       ItemType::kObservation, ItemType::kAction};
const char* to_string(ItemType item);

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t d_model = 128;
  /// K: timesteps per window; the backbone sees up to 4K tokens.
  std::size_t max_timesteps = 100;
  double dropout = 0.1;

  std::size_t ffn_width() const { return 4 * d_model; }
  std::size_t token_capacity() const { return kTokensPerStep * max_timesteps; }
  /// Throws std::invalid_argument (zero sizes, d_model % n_heads != 0, dropout outside [0,1)).
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Linear {
  Param weight;  // [in, out]
  Param bias;    // [out]
};

struct LayerNormParams {
  Param gain;
  Param bias;
};

struct Block {
  LayerNormParams ln_attn;
  Linear qkv;
  Linear attn_out;
  LayerNormParams ln_mlp;
  Linear mlp_in;
  Linear mlp_out;
};

/// Parameters shared by all tasks.
struct Backbone {
  Param timestep_embedding;  // [K, d_model], row i = window position i+1
  Param mask_embedding;      // [4, d_model], one row per ItemType
  std::vector<Block> blocks;
  LayerNormParams ln_final;
};

/// Per-task tokenizers (affine map + layer norm per item type) and
/// prediction heads (affine map per item type), indexed by ItemType.
struct TaskAdapters {
  data::TaskSpec spec;
  std::array<Linear, 4> tokenizers;
  std::array<LayerNormParams, 4> token_norms;
  std::array<Linear, 4> heads;

  std::size_t item_dim(ItemType item) const;
};

/// A batch of equal-task sequences, right-padded to `steps` timesteps.
/// Item arrays are normalized and laid out [batch * steps, dim]; padding
/// rows are zero. `masked` has one flag per token, [batch * steps * 4] in
/// (T, g, o, a) order per timestep.
struct SequenceBatch {
  std::string task_id;
  std::size_t batch = 0;
  std::size_t steps = 0;
  std::vector<std::size_t> lengths;
  std::vector<float> time_to_goal;
  std::vector<float> goal;
  std::vector<float> obs;
  std::vector<float> act;
  std::vector<std::uint8_t> masked;

  /// Empty batch of the given geometry for `spec`.
  static SequenceBatch zeros(const data::TaskSpec& spec, std::size_t batch, std::size_t steps);

  std::size_t tokens_per_row() const { return kTokensPerStep * steps; }
  /// Row of the token for (batch row b, window position t in 1..steps, item).
  std::uint32_t token_row(std::size_t b, std::size_t t, ItemType item) const;
  std::vector<float>& items(ItemType item);
  const std::vector<float>& items(ItemType item) const;
  void set_mask(std::size_t b, std::size_t t, ItemType item, bool value);
  bool is_masked(std::size_t b, std::size_t t, ItemType item) const;
};

/// Embedded token stream ready for the backbone.
struct TokenSequence {
  Var tokens;  // [batch * 4 * steps, d_model]
  std::size_t batch = 0;
  std::size_t steps = 0;
  /// Timestep-embedding index (1-based window position) per token row.
  std::vector<std::size_t> timestep_index;
  std::vector<std::uint8_t> masked;
  std::vector<std::size_t> lengths;
};

/// Backbone + per-task adapters + the normalization used to train them.
class ModelBundle {
 public:
  ModelBundle() = default;
  ModelBundle(const ModelConfig& config, std::uint64_t seed);
  ModelBundle(ModelBundle&&) noexcept = default;
  ModelBundle& operator=(ModelBundle&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  /// Deep copy of every parameter value, spec and statistic.
  ModelBundle clone() const;
  /// Dropout is a training setting; the architecture is fixed at construction.
  void set_dropout(double rate);

  /// Registers a task with freshly initialized adapters. Throws if the
  /// task exists.
  TaskAdapters& add_task(const data::TaskSpec& spec);
  void remove_task(const std::string& task_id);
  bool has_task(const std::string& task_id) const { return adapters_.count(task_id) > 0; }
  const TaskAdapters& adapters(const std::string& task_id) const;
  TaskAdapters& adapters(const std::string& task_id);
  std::vector<std::string> task_ids() const;
  data::TaskRegistry task_registry() const;

  data::NormStats& norm_stats() { return norm_; }
  const data::NormStats& norm_stats() const { return norm_; }
  const data::TaskNormStats& norm_stats(const std::string& task_id) const;

  Backbone& backbone() { return backbone_; }

  /// Every parameter in manifest order: backbone first, then tasks by id.
  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  std::vector<Param*> backbone_parameters();
  std::vector<Param*> task_parameters(const std::string& task_id);
  std::size_t parameter_count() const;

  /// Tokenizes each item, substitutes masked tokens with the item's mask
  /// embedding, and adds the timestep embedding of the window position.
  TokenSequence embed(Tape& tape, const SequenceBatch& batch) const;
  /// Pre-layer-norm causal transformer. Returns final-normalized hidden
  /// states, one row per token. Dropout is active only when `rng` is set.
  Var backbone_forward(Tape& tape, const TokenSequence& tokens, num::Pcg32* rng = nullptr) const;
  /// embed + backbone_forward.
  Var encode(Tape& tape, const SequenceBatch& batch, num::Pcg32* rng = nullptr) const;
  /// Applies `item`'s head of `task_id` to the given hidden-state rows.
  /// Action outputs are tanh-squashed; the rest are linear.
  Var head(Tape& tape, Var hidden, const std::string& task_id, ItemType item,
           std::vector<std::uint32_t> rows) const;

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  Backbone backbone_;
  std::map<std::string, std::unique_ptr<TaskAdapters>> adapters_;
  data::NormStats norm_;
};

/// Closed-form parameter counts, used to cross-check a bundle.
std::size_t backbone_parameter_count(const ModelConfig& config);
std::size_t adapter_parameter_count(const ModelConfig& config, const data::TaskSpec& spec);

// ---- single-sequence reads ------------------------------------------------
// `hidden` comes from encode() on a batch; `b` selects the batch row and `t`
// is the 1-based window position.

/// Action for timestep t, read at the o_t token. Components lie in (-1, 1).
std::vector<float> predict_action(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                                  std::size_t b, std::size_t t);
/// Normalized o_t, read at the a_{t-1} token. Throws std::out_of_range for t < 2.
std::vector<float> predict_observation(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                                       std::size_t b, std::size_t t);
/// Time-to-goal of timestep t divided by max_episode_steps, read at the
/// a_{t-1} token. Throws std::out_of_range for t < 2.
float predict_time_to_goal(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                           std::size_t b, std::size_t t);

/// Reconstruction of every masked item, each read at its own token.
struct Reconstruction {
  ItemType item;
  std::size_t b;
  std::size_t t;
  std::vector<float> values;
};
std::vector<Reconstruction> reconstruct_items(Tape& tape, const ModelBundle& model, Var hidden,
                                              const SequenceBatch& batch);

}  // namespace gcdt::model
