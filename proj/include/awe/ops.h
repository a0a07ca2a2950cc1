#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "awe/tensor.h"

// Differentiable operations. All ops check shapes eagerly and throw
// ShapeError naming the op and the offending shapes. There is no general
// broadcasting; add_bias is the only row-broadcast.
namespace awe::ad {

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// a (m x n) + bias (1 x n) on every row.
template <typename T> Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
// Row-wise log-softmax.
template <typename T> Tensor<T> log_softmax(const Tensor<T>& a);

// Inverted dropout: kept entries are scaled by 1/(1-p). Identity in eval
// mode or when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, Mode mode, DropoutStream& stream);

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  explicit BatchNormStats(std::size_t features = 0)
      : running_mean(features, T(0)), running_var(features, T(1)) {}
};

// Per-column normalization over rows. Train mode uses batch statistics and
// updates the running estimates (unbiased variance); eval mode is the affine
// map given by the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, double momentum = 0.1,
                     double eps = 1e-5);

template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count);
// out[i] = a[indices[i]]; backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> indices);
// out row r = take_a[r] ? a[r] : b[r]. Exact row copy, used to hold recurrent
// state fixed on padded steps.
template <typename T>
Tensor<T> select_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a,
                      const Tensor<T>& b);

// Sum of all entries (1 x 1).
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// Per-row sums (m x 1).
template <typename T> Tensor<T> row_sum(const Tensor<T>& a);
// out[i] = a[i, indices[i]] (m x 1).
template <typename T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> indices);

// Elementwise binary cross-entropy from logits against constant targets,
// evaluated as max(z,0) - z*y + log1p(exp(-|z|)).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

// Row-wise cosine similarity (m x 1). Zero-norm rows raise
// DegenerateInputError.
template <typename T> Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b);

// Variable-length sequences packed along rows: sequence s occupies
// lengths[s] consecutive rows.
template <typename T>
struct Packed {
  Tensor<T> data;
  std::vector<std::size_t> lengths;
};

// Mean over the rows of each sequence (batch x cols).
template <typename T> Tensor<T> mean_over_time(const Packed<T>& x);

// Sliding windows of `width` rows flattened into one row each ("valid"
// positions only). Sequences shorter than the width are left-padded with
// zeros to exactly the width.
template <typename T> Packed<T> unfold(const Packed<T>& x, std::size_t width);

// Stride-1 valid convolution over time. weight is (width*in) x out, laid out
// tap-major to match unfold.
template <typename T>
Packed<T> conv1d(const Packed<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t width);

}  // namespace awe::ad
