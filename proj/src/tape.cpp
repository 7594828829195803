#include "gcdt/numerics/tape.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace gcdt::num {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstArr = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using MutArr = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;

// c (+)= op(a) * op(b), with a stored as a_rows x a_cols and b as b_rows x b_cols.
template <typename T>
void gemm(const T* a, std::size_t a_rows, std::size_t a_cols, bool ta, const T* b, std::size_t b_rows,
          std::size_t b_cols, bool tb, T* c, bool accumulate) {
  ConstMap<T> A(a, static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
  ConstMap<T> B(b, static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
  const auto m = static_cast<Eigen::Index>(ta ? a_cols : a_rows);
  const auto n = static_cast<Eigen::Index>(tb ? b_rows : b_cols);
  MutMap<T> C(c, m, n);
  if (!accumulate) C.setZero();
  if (!ta && !tb) C.noalias() += A * B;
  else if (ta && !tb) C.noalias() += A.transpose() * B;
  else if (!ta && tb) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

std::size_t columns(const Shape& s) { return s.back(); }
std::size_t rows(const Shape& s) { return numel(s) / s.back(); }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename T>
Parameter<T>::Parameter(std::string n, Tensor<T> v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

template <typename T>
void Parameter<T>::zero_grad() {
  grad.fill(T(0));
  touched = false;
}

// ---------------------------------------------------------------------------

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, Backward backward) {
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max() - 1)
    throw std::length_error("tape capacity exceeded");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
  return nodes_[v.id];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw std::out_of_range("invalid tape variable");
  return nodes_[v.id];
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(Var v, std::span<const T> g) {
  if (!nodes_[v.id].requires_grad) return;
  auto& slot = grad_slot(v.id);
  T* out = slot.raw();
  for (std::size_t i = 0; i < g.size(); ++i) out[i] += g[i];
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, {});
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  return push(std::move(value), true, [](const Tensor<T>&) {});
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  if (!record_) return constant(p.value);
  Var v = push(p.value, true, [](const Tensor<T>&) {});
  nodes_[v.id].param = &p;
  return v;
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value;
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.numel() != 1)
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root.value.shape()));
  if (!root.requires_grad) return;
  for (auto& n : nodes_) n.grad = Tensor<T>();
  grad_slot(loss.id).fill(T(1));
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    // The closure may append to other nodes' grads but never to its own.
    n.backward(n.grad);
    if (n.param != nullptr) {
      auto& pg = n.param->grad;
      for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
      n.param->touched = true;
    }
  }
}

// ---- primitives -----------------------------------------------------------

template <typename T>
Var Tape<T>::matmul(Var a, Var b, bool ta, bool tb) {
  const Shape sa = shape(a);
  const Shape sb = shape(b);
  if (sa.size() < 2 || sb.size() < 2)
    throw ShapeError("matmul needs rank >= 2 operands, got " + to_string(sa) + " and " + to_string(sb));
  const std::size_t ar = sa[sa.size() - 2], ac = sa.back();
  const std::size_t br = sb[sb.size() - 2], bc = sb.back();
  const std::size_t m = ta ? ac : ar, k = ta ? ar : ac;
  const std::size_t kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb)
    throw ShapeError("matmul inner dimensions differ: " + to_string(sa) + (ta ? "^T" : "") + " x " +
                     to_string(sb) + (tb ? "^T" : ""));
  const bool shared_b = sb.size() == 2;
  const Shape batch_shape(sa.begin(), sa.end() - 2);
  if (!shared_b && !std::equal(sb.begin(), sb.end() - 2, batch_shape.begin(), batch_shape.end()))
    throw ShapeError("matmul batch axes differ: " + to_string(sa) + " vs " + to_string(sb));
  const std::size_t batch = numel(batch_shape);

  Shape so = batch_shape;
  so.push_back(m);
  so.push_back(n);
  Tensor<T> out(so);
  const T* pa = value(a).raw();
  const T* pb = value(b).raw();
  const std::size_t a_stride = ar * ac, b_stride = shared_b ? 0 : br * bc, o_stride = m * n;
  if (shared_b && !ta && batch > 1) {
    // Rows of all batches are contiguous: one large product.
    gemm(pa, batch * ar, ac, false, pb, br, bc, tb, out.raw(), false);
  } else {
    for (std::size_t i = 0; i < batch; ++i)
      gemm(pa + i * a_stride, ar, ac, ta, pb + i * b_stride, br, bc, tb, out.raw() + i * o_stride, false);
  }

  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [this, a, b, ta, tb, ar, ac, br, bc, m, n, batch, shared_b, a_stride, b_stride,
                                   o_stride](const Tensor<T>& g) {
    const T* pa = value(a).raw();
    const T* pb = value(b).raw();
    const T* pg = g.raw();
    if (requires_grad(a)) {
      T* ga = grad_slot(a.id).raw();
      if (shared_b && !ta && batch > 1) {
        gemm(pg, batch * m, n, false, pb, br, bc, !tb, ga, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          if (!ta)
            gemm(pg + i * o_stride, m, n, false, pb + i * b_stride, br, bc, !tb, ga + i * a_stride, true);
          else
            gemm(pb + i * b_stride, br, bc, tb, pg + i * o_stride, m, n, true, ga + i * a_stride, true);
        }
      }
    }
    if (requires_grad(b)) {
      T* gb = grad_slot(b.id).raw();
      if (shared_b && !ta && batch > 1) {
        if (!tb) gemm(pa, batch * ar, ac, true, pg, batch * m, n, false, gb, true);
        else gemm(pg, batch * m, n, true, pa, batch * ar, ac, false, gb, true);
      } else {
        for (std::size_t i = 0; i < batch; ++i) {
          if (!tb)
            gemm(pa + i * a_stride, ar, ac, !ta, pg + i * o_stride, m, n, false, gb + i * b_stride, true);
          else
            gemm(pg + i * o_stride, m, n, true, pa + i * a_stride, ar, ac, ta, gb + i * b_stride, true);
        }
      }
    }
  });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (!is_suffix(sb, sa))
    throw ShapeError("add: shape " + to_string(sb) + " does not broadcast onto " + to_string(sa));
  Tensor<T> out = value(a);
  const T* pb = value(b).raw();
  const std::size_t nb = value(b).numel();
  T* po = out.raw();
  for (std::size_t i = 0; i < out.numel(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) po[i + j] += pb[j];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [this, a, b, nb](const Tensor<T>& g) {
    accumulate(a, g.data());
    if (requires_grad(b)) {
      T* gb = grad_slot(b.id).raw();
      for (std::size_t i = 0; i < g.numel(); i += nb)
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[i + j];
    }
  });
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  if (!is_suffix(sb, sa))
    throw ShapeError("mul: shape " + to_string(sb) + " does not broadcast onto " + to_string(sa));
  Tensor<T> out = value(a);
  const T* pb = value(b).raw();
  const std::size_t nb = value(b).numel();
  T* po = out.raw();
  for (std::size_t i = 0; i < out.numel(); i += nb)
    for (std::size_t j = 0; j < nb; ++j) po[i + j] *= pb[j];
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [this, a, b, nb](const Tensor<T>& g) {
    const T* pa = value(a).raw();
    const T* pb = value(b).raw();
    if (requires_grad(a)) {
      T* ga = grad_slot(a.id).raw();
      for (std::size_t i = 0; i < g.numel(); i += nb)
        for (std::size_t j = 0; j < nb; ++j) ga[i + j] += g[i + j] * pb[j];
    }
    if (requires_grad(b)) {
      T* gb = grad_slot(b.id).raw();
      for (std::size_t i = 0; i < g.numel(); i += nb)
        for (std::size_t j = 0; j < nb; ++j) gb[j] += g[i + j] * pa[i + j];
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (auto& x : out.storage()) x *= factor;
  return push(std::move(out), requires_grad(a), [this, a, factor](const Tensor<T>& g) {
    T* ga = grad_slot(a.id).raw();
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const Shape& sx = shape(x);
  const std::size_t d = columns(sx), r = rows(sx);
  if (shape(gain) != Shape{d} || shape(bias) != Shape{d})
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "], got " +
                     to_string(shape(gain)) + " and " + to_string(shape(bias)));
  Tensor<T> out(sx);
  Tensor<T> xhat(sx);
  std::vector<T> rstd(r);
  const T* px = value(x).raw();
  const T* pg = value(gain).raw();
  const T* pb = value(bias).raw();
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = px + i * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * rs;
      xhat[i * d + j] = h;
      out[i * d + j] = h * pg[j] + pb[j];
    }
  }
  const bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  return push(std::move(out), rg,
              [this, x, gain, bias, d, r, xhat = std::move(xhat), rstd = std::move(rstd)](const Tensor<T>& g) {
                const T* pg = value(gain).raw();
                if (requires_grad(gain) || requires_grad(bias)) {
                  T* gg = requires_grad(gain) ? grad_slot(gain.id).raw() : nullptr;
                  T* gbias = requires_grad(bias) ? grad_slot(bias.id).raw() : nullptr;
                  for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < d; ++j) {
                      if (gg) gg[j] += g[i * d + j] * xhat[i * d + j];
                      if (gbias) gbias[j] += g[i * d + j];
                    }
                }
                if (requires_grad(x)) {
                  T* gx = grad_slot(x.id).raw();
                  std::vector<T> dxhat(d);
                  for (std::size_t i = 0; i < r; ++i) {
                    T mean_d = 0, mean_dx = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dxhat[j] = g[i * d + j] * pg[j];
                      mean_d += dxhat[j];
                      mean_dx += dxhat[j] * xhat[i * d + j];
                    }
                    mean_d /= static_cast<T>(d);
                    mean_dx /= static_cast<T>(d);
                    for (std::size_t j = 0; j < d; ++j)
                      gx[i * d + j] += rstd[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
                  }
                }
              });
}

template <typename T>
Var Tape<T>::softmax(Var x) {
  const Shape& sx = shape(x);
  const std::size_t d = columns(sx), r = rows(sx);
  Tensor<T> out(sx);
  const T* px = value(x).raw();
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < r; ++i) {
    ConstArr<T> row(px + i * d, static_cast<Eigen::Index>(d));
    MutArr<T> o(out.raw() + i * d, static_cast<Eigen::Index>(d));
    const T mx = row.maxCoeff();
    o = (row - mx).exp();
    // Masked entries must contribute exactly zero.
    o = (row == kNegInf).select(T(0), o);
    o /= o.sum();
  }
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  return push(std::move(out), requires_grad(x), [this, x, self, d, r](const Tensor<T>& g) {
    const T* y = value(self).raw();
    T* gx = grad_slot(x.id).raw();
    for (std::size_t i = 0; i < r; ++i) {
      ConstArr<T> yi(y + i * d, static_cast<Eigen::Index>(d));
      ConstArr<T> gi(g.raw() + i * d, static_cast<Eigen::Index>(d));
      MutArr<T> gxi(gx + i * d, static_cast<Eigen::Index>(d));
      const T dot = (gi * yi).sum();
      gxi += yi * (gi - dot);
    }
  });
}

template <typename T>
Var Tape<T>::tanh(Var x) {
  Tensor<T> out = value(x);
  MutArr<T> o(out.raw(), static_cast<Eigen::Index>(out.numel()));
  o = o.tanh();
  const Var self{static_cast<std::uint32_t>(nodes_.size())};
  return push(std::move(out), requires_grad(x), [this, x, self](const Tensor<T>& g) {
    const auto n = static_cast<Eigen::Index>(g.numel());
    ConstArr<T> y(value(self).raw(), n);
    MutArr<T>(grad_slot(x.id).raw(), n) += ConstArr<T>(g.raw(), n) * (T(1) - y * y);
  });
}

template <typename T>
Var Tape<T>::gelu(Var x) {
  const T kC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T kA = static_cast<T>(0.044715);
  const auto n = static_cast<Eigen::Index>(value(x).numel());
  ConstArr<T> xv(value(x).raw(), n);
  Eigen::Array<T, Eigen::Dynamic, 1> th = (kC * (xv + kA * xv.cube())).tanh();
  Tensor<T> out(shape(x));
  MutArr<T>(out.raw(), n) = T(0.5) * xv * (T(1) + th);
  return push(std::move(out), requires_grad(x), [this, x, n, kC, kA, th = std::move(th)](const Tensor<T>& g) {
    ConstArr<T> xv(value(x).raw(), n);
    const auto dth = (T(1) - th * th) * kC * (T(1) + T(3) * kA * xv.square());
    MutArr<T>(grad_slot(x.id).raw(), n) += ConstArr<T>(g.raw(), n) * (T(0.5) * (T(1) + th) + T(0.5) * xv * dth);
  });
}

template <typename T>
Var Tape<T>::slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Shape& sx = shape(x);
  const std::size_t d = columns(sx), r = rows(sx);
  if (begin >= end || end > d)
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(sx));
  const std::size_t w = end - begin;
  Shape so = sx;
  so.back() = w;
  Tensor<T> out(so);
  const T* px = value(x).raw();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(px + i * d + begin, w, out.raw() + i * w);
  return push(std::move(out), requires_grad(x), [this, x, begin, d, r, w](const Tensor<T>& g) {
    T* gx = grad_slot(x.id).raw();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * d + begin + j] += g[i * w + j];
  });
}

template <typename T>
Var Tape<T>::gather_rows(Var x, std::vector<std::uint32_t> idx) {
  const Shape& sx = shape(x);
  const std::size_t d = columns(sx), r = rows(sx);
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  for (auto i : idx)
    if (i >= r)
      throw ShapeError("gather_rows: row " + std::to_string(i) + " out of range for " + to_string(sx));
  Tensor<T> out(Shape{idx.size(), d});
  const T* px = value(x).raw();
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(px + idx[k] * d, d, out.raw() + k * d);
  return push(std::move(out), requires_grad(x), [this, x, d, idx = std::move(idx)](const Tensor<T>& g) {
    T* gx = grad_slot(x.id).raw();
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < d; ++j) gx[idx[k] * d + j] += g[k * d + j];
  });
}

template <typename T>
Var Tape<T>::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = columns(shape(parts[0]));
  std::size_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    if (columns(shape(p)) != d)
      throw ShapeError("concat_rows: column count " + std::to_string(columns(shape(p))) + " != " +
                       std::to_string(d));
    total += rows(shape(p));
    rg = rg || requires_grad(p);
  }
  Tensor<T> out(Shape{total, d});
  std::size_t offset = 0;
  for (Var p : parts) {
    const auto& v = value(p);
    std::copy(v.raw(), v.raw() + v.numel(), out.raw() + offset);
    offset += v.numel();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(std::move(out), rg, [this, inputs = std::move(inputs)](const Tensor<T>& g) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t n = value(p).numel();
      accumulate(p, g.data().subspan(offset, n));
      offset += n;
    }
  });
}

template <typename T>
Var Tape<T>::masked_fill(Var x, std::vector<std::uint8_t> mask, T fill) {
  const std::size_t n = value(x).numel();
  if (mask.empty() || n % mask.size() != 0)
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries does not tile " +
                     to_string(shape(x)));
  Tensor<T> out = value(x);
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i % mask.size()]) out[i] = fill;
  return push(std::move(out), requires_grad(x), [this, x, mask = std::move(mask)](const Tensor<T>& g) {
    T* gx = grad_slot(x.id).raw();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (!mask[i % mask.size()]) gx[i] += g[i];
  });
}

template <typename T>
Var Tape<T>::where_rows(std::vector<std::uint8_t> take_a, Var a, Var b) {
  const Shape& sb = shape(b);
  const std::size_t d = columns(sb), r = rows(sb);
  const std::size_t ra = rows(shape(a));
  if (columns(shape(a)) != d || (ra != 1 && ra != r))
    throw ShapeError("where_rows: " + to_string(shape(a)) + " cannot substitute rows of " + to_string(sb));
  if (take_a.size() != r)
    throw ShapeError("where_rows: mask has " + std::to_string(take_a.size()) + " entries for " +
                     std::to_string(r) + " rows");
  Tensor<T> out = value(b);
  const T* pa = value(a).raw();
  for (std::size_t i = 0; i < r; ++i)
    if (take_a[i]) std::copy_n(pa + (ra == 1 ? 0 : i * d), d, out.raw() + i * d);
  const bool rg = requires_grad(a) || requires_grad(b);
  return push(std::move(out), rg, [this, a, b, d, r, ra, take_a = std::move(take_a)](const Tensor<T>& g) {
    T* ga = requires_grad(a) ? grad_slot(a.id).raw() : nullptr;
    T* gb = requires_grad(b) ? grad_slot(b.id).raw() : nullptr;
    for (std::size_t i = 0; i < r; ++i) {
      if (take_a[i]) {
        if (ga)
          for (std::size_t j = 0; j < d; ++j) ga[(ra == 1 ? 0 : i * d) + j] += g[i * d + j];
      } else if (gb) {
        for (std::size_t j = 0; j < d; ++j) gb[i * d + j] += g[i * d + j];
      }
    }
  });
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape s) {
  Tensor<T> out = value(x).reshaped(std::move(s));
  return push(std::move(out), requires_grad(x), [this, x](const Tensor<T>& g) { accumulate(x, g.data()); });
}

template <typename T>
Var Tape<T>::permute(Var x, std::vector<std::size_t> axes) {
  const Shape sx = shape(x);
  const std::size_t rank = sx.size();
  {
    std::vector<std::size_t> sorted = axes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted.size() != rank || sorted[i] != i)
        throw ShapeError("permute: invalid axis order for rank " + std::to_string(rank));
  }
  Shape so(rank);
  for (std::size_t i = 0; i < rank; ++i) so[i] = sx[axes[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * sx[i + 1];
  // Trailing axes that stay in place are copied as contiguous blocks.
  std::size_t kept = 0;
  while (kept < rank && axes[rank - 1 - kept] == rank - 1 - kept) ++kept;
  if (kept == rank) return reshape(x, sx);
  std::size_t block = 1;
  for (std::size_t i = rank - kept; i < rank; ++i) block *= sx[i];
  const std::size_t outer_rank = rank - kept;
  const std::size_t n = numel(sx), blocks = n / block;
  // Source offset of every destination block, in destination order.
  std::vector<std::uint32_t> src(blocks);
  std::vector<std::size_t> counter(outer_rank, 0);
  for (std::size_t k = 0; k < blocks; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < outer_rank; ++i) off += counter[i] * in_strides[axes[i]];
    src[k] = static_cast<std::uint32_t>(off);
    for (std::size_t i = outer_rank; i-- > 0;) {
      if (++counter[i] < so[i]) break;
      counter[i] = 0;
    }
  }
  Tensor<T> out(so);
  const T* px = value(x).raw();
  for (std::size_t k = 0; k < blocks; ++k) std::copy_n(px + src[k], block, out.raw() + k * block);
  return push(std::move(out), requires_grad(x), [this, x, block, src = std::move(src)](const Tensor<T>& g) {
    T* gx = grad_slot(x.id).raw();
    for (std::size_t k = 0; k < src.size(); ++k) {
      const T* gk = g.raw() + k * block;
      T* dst = gx + src[k];
      for (std::size_t j = 0; j < block; ++j) dst[j] += gk[j];
    }
  });
}

template <typename T>
Var Tape<T>::sum(Var x) {
  T total = 0;
  for (T v : value(x).data()) total += v;
  return push(Tensor<T>(Shape{1}, std::vector<T>{total}), requires_grad(x), [this, x](const Tensor<T>& g) {
    T* gx = grad_slot(x.id).raw();
    const T gv = g[0];
    const std::size_t n = value(x).numel();
    for (std::size_t i = 0; i < n; ++i) gx[i] += gv;
  });
}

// ---- composites -----------------------------------------------------------

template <typename T>
Var Tape<T>::mean(Var x) {
  return scale(sum(x), T(1) / static_cast<T>(value(x).numel()));
}

template <typename T>
Var Tape<T>::causal_mask(Var scores) {
  const Shape& s = shape(scores);
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2])
    throw ShapeError("causal_mask needs trailing square matrices, got " + to_string(s));
  const std::size_t l = s.back();
  std::vector<std::uint8_t> mask(l * l, 0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = i + 1; j < l; ++j) mask[i * l + j] = 1;
  return masked_fill(scores, std::move(mask), -std::numeric_limits<T>::infinity());
}

template <typename T>
Var Tape<T>::dropout(Var x, T rate, Pcg32& rng) {
  if (rate <= T(0)) return x;
  if (rate >= T(1)) throw std::invalid_argument("dropout rate must be < 1");
  Tensor<T> keep(shape(x));
  const T scale_kept = T(1) / (T(1) - rate);
  for (auto& k : keep.storage()) k = rng.uniform() < static_cast<double>(rate) ? T(0) : scale_kept;
  return mul(x, constant(std::move(keep)));
}

template struct Parameter<float>;
template struct Parameter<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace gcdt::num
