#include "awe/adam.h"

#include <cmath>

#include "awe/error.h"

namespace awe::ad {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(std::span<const NamedTensor<T>> params) {
  AdamState<T> s;
  for (const auto& p : params) {
    s.m.emplace_back(p.tensor.size(), T(0));
    s.v.emplace_back(p.tensor.size(), T(0));
  }
  return s;
}

template <typename T>
void adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("tensor", "adam_step: state tracks " + std::to_string(state.m.size()) +
                                   " tensors, got " + std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].tensor;
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size() || v.size() != p.size())
      throw ShapeError("tensor", "adam_step: state for '" + params[k].name + "' has " +
                                     std::to_string(m.size()) + " entries, parameter has " +
                                     std::to_string(p.size()));
    auto w = p.mutable_data();
    const auto g = p.grad();
    if (!g.empty() && g.size() != p.size())
      throw ShapeError("tensor", "adam_step: grad/param size mismatch for '" + params[k].name + "'");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<NamedTensor<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (T& g : p.tensor.mutable_grad()) g = static_cast<T>(g * f);
    }
  }
  return norm;
}

template <typename T>
void zero_grad(std::span<NamedTensor<T>> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<NamedTensor<float>>, AdamState<float>&, double, const AdamConfig&);
template void adam_step(std::span<NamedTensor<double>>, AdamState<double>&, double, const AdamConfig&);
template double clip_grad_norm(std::span<NamedTensor<float>>, double);
template double clip_grad_norm(std::span<NamedTensor<double>>, double);
template void zero_grad(std::span<NamedTensor<float>>);
template void zero_grad(std::span<NamedTensor<double>>);

}  // namespace awe::ad
