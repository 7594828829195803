#include "gcdt/numerics/adamw.h"

#include <cmath>
#include <stdexcept>

namespace gcdt::num {

void AdamWOptions::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!(finite(lr) && lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(finite(weight_decay) && weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (!(finite(epsilon) && epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
}

template <typename T>
void adamw_step(std::span<Parameter<T>* const> params, AdamWState<T>& state, bool only_touched, double lr_scale) {
  for (const Parameter<T>* p : params) {
    if (only_touched && !p->touched) continue;
    if (p->grad.shape() != p->value.shape())
      throw ShapeError("adamw: gradient of '" + p->name + "' has shape " + to_string(p->grad.shape()) +
                       ", parameter has " + to_string(p->value.shape()));
    for (T g : p->grad.data())
      if (!std::isfinite(g)) throw std::domain_error("adamw: non-finite gradient in parameter '" + p->name + "'");
  }

  const auto& o = state.options;
  const double lr = o.lr * lr_scale;
  const T decay = static_cast<T>(1.0 - lr * o.weight_decay);
  ++state.step_count;
  for (Parameter<T>* p : params) {
    if (only_touched && !p->touched) continue;
    auto& mom = state.moments[p->name];
    const std::size_t n = p->value.numel();
    if (mom.first.size() != n) {
      mom.first.assign(n, T(0));
      mom.second.assign(n, T(0));
      mom.steps = 0;
    }
    ++mom.steps;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(mom.steps));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(mom.steps));
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(o.epsilon);
    T* theta = p->value.raw();
    const T* g = p->grad.raw();
    for (std::size_t i = 0; i < n; ++i) {
      mom.first[i] = b1 * mom.first[i] + (T(1) - b1) * g[i];
      mom.second[i] = b2 * mom.second[i] + (T(1) - b2) * g[i] * g[i];
      const T denom = std::sqrt(mom.second[i]) * inv_sqrt_bc2 + eps;
      theta[i] = theta[i] * decay - step_size * mom.first[i] / denom;
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter<T>* p : params) {
    if (!p->touched) continue;
    for (T g : p->grad.data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (Parameter<T>* p : params) {
      if (!p->touched) continue;
      for (T& g : p->grad.storage()) g *= factor;
    }
  }
  return norm;
}

template void adamw_step<float>(std::span<Parameter<float>* const>, AdamWState<float>&, bool, double);
template void adamw_step<double>(std::span<Parameter<double>* const>, AdamWState<double>&, bool, double);
template double clip_grad_norm<float>(std::span<Parameter<float>* const>, double);
template double clip_grad_norm<double>(std::span<Parameter<double>* const>, double);

}  // namespace gcdt::num
