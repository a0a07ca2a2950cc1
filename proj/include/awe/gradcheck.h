#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "awe/tensor.h"

namespace awe::ad {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;  // scalar entries compared
  std::size_t n_shapes = 1;   // input shapes folded into this result
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
};

// Compares backward() against central differences of f with respect to
// every entry of every input. f must be deterministic across calls.
using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;
GradCheckResult check_gradients(const std::string& name, const ScalarFn& f,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& opts = {});

// Every differentiable op, the three losses and both encoders, each over at
// least three random shapes drawn from `seed`. One result per check name.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 7,
                                                 const GradCheckOptions& opts = {});

}  // namespace awe::ad
