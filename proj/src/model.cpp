#include "gcdt/model/model.h"

#include <cmath>
#include <stdexcept>

#include "gcdt/numerics/rng.h"

namespace gcdt::model {

const char* to_string(ItemType item) {
  switch (item) {
    case ItemType::kTimeToGoal: return "time_to_goal";
    case ItemType::kGoal: return "goal";
    case ItemType::kObservation: return "observation";
    case ItemType::kAction: return "action";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || d_model == 0 || max_timesteps == 0)
    throw std::invalid_argument("model config: n_layers, n_heads, d_model and max_timesteps must be >= 1");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                                std::to_string(n_heads));
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model config: dropout must lie in [0, 1)");
}

std::size_t TaskAdapters::item_dim(ItemType item) const {
  switch (item) {
    case ItemType::kTimeToGoal: return 1;
    case ItemType::kGoal: return spec.goal_dim;
    case ItemType::kObservation: return spec.obs_dim;
    case ItemType::kAction: return spec.act_dim;
  }
  return 0;
}

// ---- SequenceBatch --------------------------------------------------------

SequenceBatch SequenceBatch::zeros(const data::TaskSpec& spec, std::size_t batch, std::size_t steps) {
  SequenceBatch b;
  b.task_id = spec.task_id;
  b.batch = batch;
  b.steps = steps;
  b.lengths.assign(batch, steps);
  const std::size_t rows = batch * steps;
  b.time_to_goal.assign(rows, 0.0f);
  b.goal.assign(rows * spec.goal_dim, 0.0f);
  b.obs.assign(rows * spec.obs_dim, 0.0f);
  b.act.assign(rows * spec.act_dim, 0.0f);
  b.masked.assign(rows * kTokensPerStep, 0);
  return b;
}

std::uint32_t SequenceBatch::token_row(std::size_t b, std::size_t t, ItemType item) const {
  if (b >= batch || t < 1 || t > steps) throw std::out_of_range("token_row: position outside the batch");
  return static_cast<std::uint32_t>(b * tokens_per_row() + (t - 1) * kTokensPerStep + static_cast<std::size_t>(item));
}

std::vector<float>& SequenceBatch::items(ItemType item) {
  switch (item) {
    case ItemType::kTimeToGoal: return time_to_goal;
    case ItemType::kGoal: return goal;
    case ItemType::kObservation: return obs;
    default: return act;
  }
}

const std::vector<float>& SequenceBatch::items(ItemType item) const {
  return const_cast<SequenceBatch*>(this)->items(item);
}

void SequenceBatch::set_mask(std::size_t b, std::size_t t, ItemType item, bool value) {
  masked[token_row(b, t, item)] = value ? 1 : 0;
}

bool SequenceBatch::is_masked(std::size_t b, std::size_t t, ItemType item) const {
  return masked[token_row(b, t, item)] != 0;
}

// ---- parameter construction -----------------------------------------------

namespace {

std::uint64_t name_hash(const std::string& name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Each parameter draws from its own substream keyed by name, so adding or
// removing tasks never changes the initialization of anything else.
Param normal_param(const std::string& name, num::Shape shape, double stddev, std::uint64_t seed) {
  num::Pcg32 rng(num::mix_seed(seed, name_hash(name)));
  num::Tensor<float> v(std::move(shape));
  for (float& x : v.storage()) {
    double z;
    do z = rng.normal(); while (std::abs(z) > 2.0);
    x = static_cast<float>(z * stddev);
  }
  return Param(name, std::move(v));
}

Param const_param(const std::string& name, num::Shape shape, float value) {
  return Param(name, num::Tensor<float>(std::move(shape), value));
}

constexpr double kInitStd = 0.02;
constexpr double kTokenizerBiasStd = 1.0;

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, std::uint64_t seed,
                   double scale = 1.0) {
  return Linear{normal_param(name + ".weight", {in, out}, kInitStd * scale, seed), const_param(name + ".bias", {out}, 0.0f)};
}

LayerNormParams make_norm(const std::string& name, std::size_t d) {
  return LayerNormParams{const_param(name + ".gain", {d}, 1.0f), const_param(name + ".bias", {d}, 0.0f)};
}

void collect(std::vector<Param*>& out, Linear& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

void collect(std::vector<Param*>& out, LayerNormParams& n) {
  out.push_back(&n.gain);
  out.push_back(&n.bias);
}

// Graph leaves for read-only parameters. Gradients (when recorded) are
// written into Parameter::grad, which is the only mutation.
Var leaf(Tape& tape, const Param& p) { return tape.parameter(const_cast<Param&>(p)); }

Var apply(Tape& tape, const Linear& l, Var x) { return tape.linear(x, leaf(tape, l.weight), leaf(tape, l.bias)); }

Var apply(Tape& tape, const LayerNormParams& n, Var x) {
  return tape.layer_norm(x, leaf(tape, n.gain), leaf(tape, n.bias));
}

}  // namespace

ModelBundle::ModelBundle(const ModelConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
  config_.validate();
  const std::size_t d = config_.d_model;
  backbone_.timestep_embedding = normal_param("backbone.timestep_embedding", {config_.max_timesteps, d}, kInitStd, seed);
  backbone_.mask_embedding = normal_param("backbone.mask_embedding", {kTokensPerStep, d}, kInitStd, seed);
  backbone_.blocks.reserve(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    const std::string p = "backbone.blocks." + std::to_string(i);
    Block b;
    b.ln_attn = make_norm(p + ".ln_attn", d);
    b.qkv = make_linear(p + ".qkv", d, 3 * d, seed);
    b.attn_out = make_linear(p + ".attn_out", d, d, seed);
    b.ln_mlp = make_norm(p + ".ln_mlp", d);
    b.mlp_in = make_linear(p + ".mlp_in", d, config_.ffn_width(), seed);
    b.mlp_out = make_linear(p + ".mlp_out", config_.ffn_width(), d, seed);
    backbone_.blocks.push_back(std::move(b));
  }
  backbone_.ln_final = make_norm("backbone.ln_final", d);
}

TaskAdapters& ModelBundle::add_task(const data::TaskSpec& spec) {
  spec.validate();
  if (has_task(spec.task_id)) throw std::invalid_argument("task '" + spec.task_id + "' already registered");
  auto a = std::make_unique<TaskAdapters>();
  a->spec = spec;
  const std::string p = "task." + spec.task_id;
  const double head_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));
  for (ItemType item : kItemTypes) {
    const auto i = static_cast<std::size_t>(item);
    const std::string name = to_string(item);
    // Tokenizer biases are random: with a zero bias the following layer norm
    // would make each token invariant to the scale of its input.
    const std::string tok = p + ".tokenizer." + name;
    a->tokenizers[i] = Linear{normal_param(tok + ".weight", {a->item_dim(item), config_.d_model}, kInitStd, seed_),
                              normal_param(tok + ".bias", {config_.d_model}, kTokenizerBiasStd, seed_)};
    a->token_norms[i] = make_norm(p + ".token_norm." + name, config_.d_model);
    a->heads[i] = make_linear(p + ".head." + name, config_.d_model, a->item_dim(item), seed_, head_scale);
  }
  auto& ref = *a;
  adapters_.emplace(spec.task_id, std::move(a));
  return ref;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle out;
  out.config_ = config_;
  out.seed_ = seed_;
  out.backbone_ = backbone_;
  for (const auto& [id, a] : adapters_) out.adapters_.emplace(id, std::make_unique<TaskAdapters>(*a));
  out.norm_ = norm_;
  for (Param* p : out.parameters()) p->zero_grad();
  return out;
}

void ModelBundle::set_dropout(double rate) {
  ModelConfig c = config_;
  c.dropout = rate;
  c.validate();
  config_ = c;
}

void ModelBundle::remove_task(const std::string& task_id) { adapters_.erase(task_id); }

const TaskAdapters& ModelBundle::adapters(const std::string& task_id) const {
  auto it = adapters_.find(task_id);
  if (it == adapters_.end()) throw std::out_of_range("no adapters for task '" + task_id + "'");
  return *it->second;
}

TaskAdapters& ModelBundle::adapters(const std::string& task_id) {
  return const_cast<TaskAdapters&>(std::as_const(*this).adapters(task_id));
}

std::vector<std::string> ModelBundle::task_ids() const {
  std::vector<std::string> ids;
  for (const auto& [id, _] : adapters_) ids.push_back(id);
  return ids;
}

data::TaskRegistry ModelBundle::task_registry() const {
  data::TaskRegistry reg;
  for (const auto& [id, a] : adapters_) reg.emplace(id, a->spec);
  return reg;
}

const data::TaskNormStats& ModelBundle::norm_stats(const std::string& task_id) const {
  auto it = norm_.find(task_id);
  if (it == norm_.end()) throw std::out_of_range("no normalization statistics for task '" + task_id + "'");
  return it->second;
}

std::vector<Param*> ModelBundle::backbone_parameters() {
  std::vector<Param*> out{&backbone_.timestep_embedding, &backbone_.mask_embedding};
  for (auto& b : backbone_.blocks) {
    collect(out, b.ln_attn);
    collect(out, b.qkv);
    collect(out, b.attn_out);
    collect(out, b.ln_mlp);
    collect(out, b.mlp_in);
    collect(out, b.mlp_out);
  }
  collect(out, backbone_.ln_final);
  return out;
}

std::vector<Param*> ModelBundle::task_parameters(const std::string& task_id) {
  TaskAdapters& a = adapters(task_id);
  std::vector<Param*> out;
  for (std::size_t i = 0; i < kTokensPerStep; ++i) {
    collect(out, a.tokenizers[i]);
    collect(out, a.token_norms[i]);
    collect(out, a.heads[i]);
  }
  return out;
}

std::vector<Param*> ModelBundle::parameters() {
  auto out = backbone_parameters();
  for (const auto& id : task_ids()) {
    auto t = task_parameters(id);
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

std::vector<const Param*> ModelBundle::parameters() const {
  auto mut = const_cast<ModelBundle*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : parameters()) n += p->value.numel();
  return n;
}

std::size_t backbone_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_width();
  const std::size_t per_block = 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
  return c.max_timesteps * d + kTokensPerStep * d + c.n_layers * per_block + 2 * d;
}

std::size_t adapter_parameter_count(const ModelConfig& c, const data::TaskSpec& s) {
  const std::size_t d = c.d_model;
  const std::size_t dims = 1 + s.goal_dim + s.obs_dim + s.act_dim;
  const std::size_t tokenizers = dims * d + kTokensPerStep * d;
  const std::size_t norms = kTokensPerStep * 2 * d;
  const std::size_t heads = d * dims + dims;
  return tokenizers + norms + heads;
}

// ---- forward --------------------------------------------------------------

TokenSequence ModelBundle::embed(Tape& tape, const SequenceBatch& batch) const {
  const TaskAdapters& a = adapters(batch.task_id);
  if (batch.steps == 0 || batch.batch == 0) throw std::invalid_argument("embed: empty batch");
  if (batch.steps > config_.max_timesteps)
    throw std::invalid_argument("embed: window of " + std::to_string(batch.steps) + " timesteps exceeds K = " +
                                std::to_string(config_.max_timesteps));
  const std::size_t rows = batch.batch * batch.steps;
  if (batch.masked.size() != rows * kTokensPerStep || batch.lengths.size() != batch.batch)
    throw num::ShapeError("embed: mask or length arrays do not match the batch geometry");

  // Per item type: tokenizer, layer norm, then mask substitution.
  std::array<Var, kTokensPerStep> typed;
  const Var mask_table = leaf(tape, backbone_.mask_embedding);
  for (ItemType item : kItemTypes) {
    const auto i = static_cast<std::size_t>(item);
    const std::size_t dim = a.item_dim(item);
    const auto& values = batch.items(item);
    if (values.size() != rows * dim)
      throw num::ShapeError(std::string("embed: ") + to_string(item) + " array has " + std::to_string(values.size()) +
                            " values, expected " + std::to_string(rows * dim));
    Var x = tape.constant(num::Tensor<float>({rows, dim}, values));
    Var tok = apply(tape, a.token_norms[i], apply(tape, a.tokenizers[i], x));
    std::vector<std::uint8_t> take_mask(rows);
    bool any = false;
    for (std::size_t r = 0; r < rows; ++r) {
      take_mask[r] = batch.masked[r * kTokensPerStep + i];
      any = any || take_mask[r];
    }
    if (any) tok = tape.where_rows(std::move(take_mask), tape.gather_rows(mask_table, {static_cast<std::uint32_t>(i)}), tok);
    typed[i] = tok;
  }

  // Interleave to (T, g, o, a) per timestep: typed rows are stacked
  // item-major, so token (r, item) lives at item * rows + r.
  const Var stacked = tape.concat_rows(typed);
  std::vector<std::uint32_t> order(rows * kTokensPerStep);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < kTokensPerStep; ++i)
      order[r * kTokensPerStep + i] = static_cast<std::uint32_t>(i * rows + r);
  Var tokens = tape.gather_rows(stacked, std::move(order));

  TokenSequence seq;
  seq.batch = batch.batch;
  seq.steps = batch.steps;
  seq.masked = batch.masked;
  seq.lengths = batch.lengths;
  std::vector<std::uint32_t> ts_rows(rows * kTokensPerStep);
  seq.timestep_index.resize(rows * kTokensPerStep);
  for (std::size_t k = 0; k < ts_rows.size(); ++k) {
    const std::size_t position = (k / kTokensPerStep) % batch.steps;  // 0-based window position
    ts_rows[k] = static_cast<std::uint32_t>(position);
    seq.timestep_index[k] = position + 1;
  }
  seq.tokens = tape.add(tokens, tape.gather_rows(leaf(tape, backbone_.timestep_embedding), std::move(ts_rows)));
  return seq;
}

Var ModelBundle::backbone_forward(Tape& tape, const TokenSequence& seq, num::Pcg32* rng) const {
  const std::size_t n = seq.steps * kTokensPerStep;
  if (seq.steps > config_.max_timesteps)
    throw std::invalid_argument("backbone: " + std::to_string(n) + " tokens exceed capacity " +
                                std::to_string(config_.token_capacity()));
  const std::size_t d = config_.d_model, h = config_.n_heads, dh = d / h, b = seq.batch;
  const float rate = rng ? static_cast<float>(config_.dropout) : 0.0f;
  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  auto drop = [&](Var x) { return rate > 0.0f ? tape.dropout(x, rate, *rng) : x; };
  auto heads_first = [&](Var x) { return tape.permute(tape.reshape(x, {b, n, h, dh}), {0, 2, 1, 3}); };

  Var x = drop(seq.tokens);
  for (const Block& blk : backbone_.blocks) {
    const Var qkv = apply(tape, blk.qkv, apply(tape, blk.ln_attn, x));
    const Var q = heads_first(tape.slice_cols(qkv, 0, d));
    const Var k = heads_first(tape.slice_cols(qkv, d, 2 * d));
    const Var v = heads_first(tape.slice_cols(qkv, 2 * d, 3 * d));
    Var att = tape.scale(tape.matmul(q, k, false, true), inv_sqrt_dh);  // [b, h, n, n]
    att = drop(tape.softmax(tape.causal_mask(att)));
    Var y = tape.matmul(att, v);  // [b, h, n, dh]
    y = tape.reshape(tape.permute(y, {0, 2, 1, 3}), {b * n, d});
    x = tape.add(x, drop(apply(tape, blk.attn_out, y)));

    Var m = tape.gelu(apply(tape, blk.mlp_in, apply(tape, blk.ln_mlp, x)));
    x = tape.add(x, drop(apply(tape, blk.mlp_out, m)));
  }
  return apply(tape, backbone_.ln_final, x);
}

Var ModelBundle::encode(Tape& tape, const SequenceBatch& batch, num::Pcg32* rng) const {
  return backbone_forward(tape, embed(tape, batch), rng);
}

Var ModelBundle::head(Tape& tape, Var hidden, const std::string& task_id, ItemType item,
                      std::vector<std::uint32_t> rows) const {
  const TaskAdapters& a = adapters(task_id);
  Var out = apply(tape, a.heads[static_cast<std::size_t>(item)], tape.gather_rows(hidden, std::move(rows)));
  return item == ItemType::kAction ? tape.tanh(out) : out;
}

// ---- single-sequence reads ------------------------------------------------

namespace {
std::vector<float> read(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch, ItemType item,
                        std::uint32_t row) {
  const Var out = model.head(tape, hidden, batch.task_id, item, {row});
  const auto& v = tape.value(out);
  return {v.data().begin(), v.data().end()};
}

void check_position(const SequenceBatch& batch, std::size_t b, std::size_t t) {
  if (b >= batch.batch || t < 1 || t > batch.lengths.at(b))
    throw std::out_of_range("timestep " + std::to_string(t) + " outside the window");
}
}  // namespace

std::vector<float> predict_action(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                                  std::size_t b, std::size_t t) {
  check_position(batch, b, t);
  return read(tape, model, hidden, batch, ItemType::kAction, batch.token_row(b, t, ItemType::kObservation));
}

std::vector<float> predict_observation(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                                       std::size_t b, std::size_t t) {
  check_position(batch, b, t);
  if (t < 2) throw std::out_of_range("predict_observation needs t >= 2 (no action token precedes o_1)");
  return read(tape, model, hidden, batch, ItemType::kObservation, batch.token_row(b, t - 1, ItemType::kAction));
}

float predict_time_to_goal(Tape& tape, const ModelBundle& model, Var hidden, const SequenceBatch& batch,
                           std::size_t b, std::size_t t) {
  check_position(batch, b, t);
  if (t < 2) throw std::out_of_range("predict_time_to_goal needs t >= 2 (no action token precedes T_1)");
  return read(tape, model, hidden, batch, ItemType::kTimeToGoal, batch.token_row(b, t - 1, ItemType::kAction))[0];
}

std::vector<Reconstruction> reconstruct_items(Tape& tape, const ModelBundle& model, Var hidden,
                                              const SequenceBatch& batch) {
  std::vector<Reconstruction> out;
  for (std::size_t b = 0; b < batch.batch; ++b)
    for (std::size_t t = 1; t <= batch.lengths[b]; ++t)
      for (ItemType item : kItemTypes)
        if (batch.is_masked(b, t, item))
          out.push_back({item, b, t, read(tape, model, hidden, batch, item, batch.token_row(b, t, item))});
  return out;
}

}  // namespace gcdt::model
