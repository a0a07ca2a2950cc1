#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "awe/tensor.h"

namespace awe::ad {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;

  // Zero moments sized to match the parameters.
  static AdamState zeros_like(std::span<const NamedTensor<T>> params);
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected ADAM update using each parameter's accumulated grad.
// Parameters without a grad buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<NamedTensor<T>> params, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {});

// Scales all grads so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<NamedTensor<T>> params, double max_norm);

template <typename T>
void zero_grad(std::span<NamedTensor<T>> params);

}  // namespace awe::ad
