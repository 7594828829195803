#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gcdt/numerics/rng.h"
#include "gcdt/numerics/tensor.h"

namespace gcdt::num {

/// A trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor<T> value);

  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  /// Set when a backward pass reached this parameter since the last zero_grad().
  bool touched = false;

  void zero_grad();
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

/// Append-only record of primitive operations for reverse-mode
/// differentiation. Nodes are stored in creation order, which is a
/// topological order, so backward() is a single reverse sweep.
///
/// "Rows" below means all leading axes flattened; the last axis is the
/// column axis.
template <typename T>
class Tape {
 public:
  /// With `record_gradients` false, parameters enter as constants and no
  /// backward closures are kept (inference).
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> value);
  /// Leaf that receives a gradient but is not bound to a Parameter.
  Var variable(Tensor<T> value);
  /// Leaf bound to `p`; backward() accumulates into p.grad. `p` must
  /// outlive the tape.
  Var parameter(Parameter<T>& p);

  const Tensor<T>& value(Var v) const;
  /// Gradient of the last backward() loss w.r.t. `v`; zeros when none reached it.
  Tensor<T> grad(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Backpropagates from a one-element `loss`. Each recorded node is
  /// visited at most once.
  void backward(Var loss);

  // ---- primitives -------------------------------------------------------

  /// op(a) @ op(b) over the last two axes. Leading axes of `a` are batch
  /// axes; `b` either has the same leading axes or is rank 2 (shared).
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  /// Elementwise sum; `b` may also match a trailing suffix of a's shape.
  Var add(Var a, Var b);
  /// Elementwise product; `b` may also match a trailing suffix of a's shape.
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  /// Per-row normalization with population variance, then gain and bias
  /// (both shaped [columns]).
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  /// Row-wise softmax. -inf entries get exactly zero probability.
  Var softmax(Var x);
  Var tanh(Var x);
  /// GELU, tanh approximation.
  Var gelu(Var x);
  /// Columns [begin, end) of every row.
  Var slice_cols(Var x, std::size_t begin, std::size_t end);
  /// Selects rows by index into a [rows.size(), columns] result.
  Var gather_rows(Var x, std::vector<std::uint32_t> rows);
  /// Stacks rows of all parts (equal column counts) into one matrix.
  Var concat_rows(std::span<const Var> parts);
  /// Replaces x[i] by `fill` where mask[i % mask.size()] is set.
  Var masked_fill(Var x, std::vector<std::uint8_t> mask, T fill);
  /// Row i is a[i] (or a[0] when a has one row) where take_a[i] is set,
  /// otherwise b[i].
  Var where_rows(std::vector<std::uint8_t> take_a, Var a, Var b);
  Var reshape(Var x, Shape shape);
  Var permute(Var x, std::vector<std::size_t> axes);
  /// Sum of all elements, shape [1].
  Var sum(Var x);

  // ---- composites -------------------------------------------------------

  Var sub(Var a, Var b) { return add(a, scale(b, T(-1))); }
  Var mean(Var x);
  Var linear(Var x, Var weight, Var bias) { return add(matmul(x, weight), bias); }
  /// Masks entries above the diagonal of the trailing square matrices with -inf.
  Var causal_mask(Var scores);
  /// Inverted dropout; identity when rate == 0.
  Var dropout(Var x, T rate, Pcg32& rng);

 private:
  using Backward = std::function<void(const Tensor<T>& grad_out)>;

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor<T>& grad_slot(std::uint32_t id);
  void accumulate(Var v, std::span<const T> g);

  std::vector<Node> nodes_;
  bool record_ = true;
};

extern template struct Parameter<float>;
extern template struct Parameter<double>;
extern template class Tape<float>;
extern template class Tape<double>;

/// A differentiable program over the primitive set: receives its inputs as
/// tape variables and returns its outputs.
template <typename T>
using Program = std::function<std::vector<Var>(Tape<T>&, std::span<const Var>)>;

/// Records `program` on `tape` with every input as a gradient-receiving
/// leaf. Returns the output handles; input handles are written to `inputs_out`.
template <typename T>
std::vector<Var> forward(Tape<T>& tape, const Program<T>& program, std::span<const Tensor<T>> inputs,
                         std::vector<Var>* inputs_out = nullptr) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.variable(x));
  auto outputs = program(tape, leaves);
  if (inputs_out) *inputs_out = std::move(leaves);
  return outputs;
}

}  // namespace gcdt::num
