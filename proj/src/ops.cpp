#include "awe/ops.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "awe/error.h"
#include "awe/util.h"

namespace awe::ad {

namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw ShapeError("tensor", std::string(op) + ": " + detail);
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape()))
    shape_error(op, "shapes " + a.shape().str() + " and " + b.shape().str() + " differ");
}

// Builds the output node; the tape is recorded only when some input needs a
// gradient and recording is on.
template <typename T>
Tensor<T> emit(const char* op, Shape shape, std::vector<T> value,
               std::vector<NodePtr<T>> inputs, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(value);
  node->id = next_node_id();
  node->op = op;
  bool record = false;
  if (grad_enabled())
    for (const auto& in : inputs) record = record || in->requires_grad;
  if (record) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward_fn = std::move(fn);
  }
  return Tensor<T>(std::move(node));
}

// Elementwise unary op given f(x) and f'(x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D df) {
  std::vector<T> out(a.size());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return emit<T>(op, a.shape(), std::move(out), {a.node()}, [df](Node<T>& self) {
    auto& in = *self.inputs[0];
    auto g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    shape_error("matmul", "inner dimensions differ: " + a.shape().str() + " x " + b.shape().str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  const T* A = a.data().data();
  const T* B = b.data().data();
  // Each output row depends only on its own input row and is accumulated in
  // a fixed order, so results do not depend on the batch composition.
  for (std::size_t i = 0; i < m; ++i) {
    T* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return emit<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                 [m, k, n](Node<T>& self) {
                   auto& na = *self.inputs[0];
                   auto& nb = *self.inputs[1];
                   const T* G = self.grad.data();
                   if (na.requires_grad) {
                     T* ga = na.ensure_grad().data();
                     const T* B = nb.value.data();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         const T* brow = B + p * n;
                         const T* grow = G + i * n;
                         T acc = T(0);
                         for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                         ga[i * k + p] += acc;
                       }
                   }
                   if (nb.requires_grad) {
                     T* gb = nb.ensure_grad().data();
                     const T* A = na.value.data();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         const T av = A[i * k + p];
                         T* gbrow = gb + p * n;
                         const T* grow = G + i * n;
                         for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                       }
                   }
                 });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return emit<T>("add", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return emit<T>("sub", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (self.inputs[0]->requires_grad) {
      auto g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return emit<T>("mul", a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
    }
    if (nb.requires_grad) {
      auto g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& a, const Tensor<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    shape_error("add_bias", "bias " + bias.shape().str() + " does not fit " + a.shape().str());
  const std::size_t n = a.cols();
  std::vector<T> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias.data()[i % n];
  return emit<T>("add_bias", a.shape(), std::move(out), {a.node(), bias.node()},
                 [n](Node<T>& self) {
                   if (self.inputs[0]->requires_grad) {
                     auto g = self.inputs[0]->ensure_grad();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                   }
                   if (self.inputs[1]->requires_grad) {
                     auto g = self.inputs[1]->ensure_grad();
                     for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
                   }
                 });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary<T>("scale", a, [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary<T>("add_scalar", a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  // NaN passes through so a poisoned input still surfaces as a bad loss.
  return unary<T>("relu", a, [](T x) { return x < T(0) ? T(0) : x; },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>("sigmoid", a,
                  [](T x) {
                    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
                    const T e = std::exp(x);
                    return e / (T(1) + e);
                  },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary<T>("tanh", a, [](T x) { return std::tanh(x); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) shape_error("log_softmax", "zero columns");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    T mx = *std::max_element(x, x + n);
    T s = T(0);
    for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] - lse;
  }
  return emit<T>("log_softmax", a.shape(), std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const T* gy = self.grad.data() + i * n;
      const T* y = self.value.data() + i * n;
      T s = T(0);
      for (std::size_t j = 0; j < n; ++j) s += gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, Mode mode, DropoutStream& stream) {
  if (p < 0.0 || p >= 1.0) throw ContractError("tensor", "dropout: p must lie in [0, 1)");
  if (mode == Mode::kEval || p == 0.0) return a;
  const std::uint64_t first = stream.reserve(a.size());
  const T keep_scale = T(1.0 / (1.0 - p));
  std::vector<T> mask(a.size());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = counter_uniform(stream.seed(), first + i) < p ? T(0) : keep_scale;
    out[i] = a.data()[i] * mask[i];
  }
  return emit<T>("dropout", a.shape(), std::move(out), {a.node()},
                 [mask = std::move(mask)](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                 });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, Mode mode, double momentum, double eps) {
  const std::size_t m = a.rows(), n = a.cols();
  if (gamma.shape() != Shape{1, n} || beta.shape() != Shape{1, n} ||
      stats.running_mean.size() != n || stats.running_var.size() != n)
    shape_error("batch_norm", "parameters do not match input " + a.shape().str());
  if (m == 0) shape_error("batch_norm", "empty batch");
  const T* x = a.data().data();
  std::vector<T> out(a.size());
  if (mode == Mode::kEval) {
    std::vector<T> mul_(n), add_(n);
    for (std::size_t j = 0; j < n; ++j) {
      const T inv = T(1) / std::sqrt(stats.running_var[j] + T(eps));
      mul_[j] = gamma.data()[j] * inv;
      add_[j] = beta.data()[j] - stats.running_mean[j] * mul_[j];
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] * mul_[j] + add_[j];
    std::vector<T> rm = stats.running_mean, rv = stats.running_var;
    return emit<T>("batch_norm_eval", a.shape(), std::move(out),
                   {a.node(), gamma.node(), beta.node()},
                   [m, n, eps, rm = std::move(rm), rv = std::move(rv)](Node<T>& self) {
                     auto& nx = *self.inputs[0];
                     auto& ng = *self.inputs[1];
                     auto& nbt = *self.inputs[2];
                     for (std::size_t j = 0; j < n; ++j) {
                       const T inv = T(1) / std::sqrt(rv[j] + T(eps));
                       T sg = T(0), sb = T(0);
                       for (std::size_t i = 0; i < m; ++i) {
                         const T gy = self.grad[i * n + j];
                         sb += gy;
                         sg += gy * (nx.value[i * n + j] - rm[j]) * inv;
                         if (nx.requires_grad) nx.ensure_grad()[i * n + j] += gy * ng.value[j] * inv;
                       }
                       if (ng.requires_grad) ng.ensure_grad()[j] += sg;
                       if (nbt.requires_grad) nbt.ensure_grad()[j] += sb;
                     }
                   });
  }
  std::vector<T> mu(n, T(0)), inv_std(n), xhat(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) mu[j] += x[i * n + j];
  for (auto& v : mu) v /= T(m);
  std::vector<T> var(n, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const T d = x[i * n + j] - mu[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < n; ++j) {
    const T biased = var[j] / T(m);
    inv_std[j] = T(1) / std::sqrt(biased + T(eps));
    const T unbiased = m > 1 ? var[j] / T(m - 1) : biased;
    stats.running_mean[j] = T((1 - momentum) * stats.running_mean[j] + momentum * mu[j]);
    stats.running_var[j] = T((1 - momentum) * stats.running_var[j] + momentum * unbiased);
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = i * n + j;
      xhat[k] = (x[k] - mu[j]) * inv_std[j];
      out[k] = gamma.data()[j] * xhat[k] + beta.data()[j];
    }
  return emit<T>("batch_norm_train", a.shape(), std::move(out),
                 {a.node(), gamma.node(), beta.node()},
                 [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                   auto& nx = *self.inputs[0];
                   auto& ng = *self.inputs[1];
                   auto& nbt = *self.inputs[2];
                   for (std::size_t j = 0; j < n; ++j) {
                     T sum_g = T(0), sum_gx = T(0);
                     for (std::size_t i = 0; i < m; ++i) {
                       const T gy = self.grad[i * n + j];
                       sum_g += gy;
                       sum_gx += gy * xhat[i * n + j];
                     }
                     if (ng.requires_grad) ng.ensure_grad()[j] += sum_gx;
                     if (nbt.requires_grad) nbt.ensure_grad()[j] += sum_g;
                     if (nx.requires_grad) {
                       auto g = nx.ensure_grad();
                       const T k = ng.value[j] * inv_std[j] / T(m);
                       for (std::size_t i = 0; i < m; ++i) {
                         const std::size_t idx = i * n + j;
                         g[idx] += k * (T(m) * self.grad[idx] - sum_g - xhat[idx] * sum_gx);
                       }
                     }
                   }
                 });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) shape_error("concat_cols", "no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  std::vector<NodePtr<T>> inputs;
  for (const auto& p : parts) {
    if (p.rows() != m)
      shape_error("concat_cols", "row counts differ: " + parts[0].shape().str() + " vs " + p.shape().str());
    offsets.push_back(n);
    n += p.cols();
    inputs.push_back(p.node());
  }
  std::vector<T> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().data() + i * c, c, out.data() + i * n + offsets[k]);
  }
  return emit<T>("concat_cols", {m, n}, std::move(out), std::move(inputs),
                 [m, n, offsets](Node<T>& self) {
                   for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                     auto& in = *self.inputs[k];
                     if (!in.requires_grad) continue;
                     auto g = in.ensure_grad();
                     const std::size_t c = in.shape.cols;
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < c; ++j)
                         g[i * c + j] += self.grad[i * n + offsets[k] + j];
                   }
                 });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) shape_error("concat_rows", "no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<T> out;
  std::vector<NodePtr<T>> inputs;
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n)
      shape_error("concat_rows", "column counts differ: " + parts[0].shape().str() + " vs " + p.shape().str());
    out.insert(out.end(), p.data().begin(), p.data().end());
    m += p.rows();
    inputs.push_back(p.node());
  }
  return emit<T>("concat_rows", {m, n}, std::move(out), std::move(inputs), [](Node<T>& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t sz = in->value.size();
      if (in->requires_grad) {
        auto g = in->ensure_grad();
        for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[off + i];
      }
      off += sz;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t start, std::size_t count) {
  if (start + count > a.cols())
    shape_error("slice_cols", "columns [" + std::to_string(start) + ", " +
                                  std::to_string(start + count) + ") out of " + a.shape().str());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(a.data().data() + i * n + start, count, out.data() + i * count);
  return emit<T>("slice_cols", {m, count}, std::move(out), {a.node()},
                 [m, n, start, count](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       g[i * n + start + j] += self.grad[i * count + j];
                 });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t start, std::size_t count) {
  if (start + count > a.rows())
    shape_error("slice_rows", "rows [" + std::to_string(start) + ", " +
                                  std::to_string(start + count) + ") out of " + a.shape().str());
  const std::size_t n = a.cols();
  std::vector<T> out(a.data().begin() + static_cast<long>(start * n),
                     a.data().begin() + static_cast<long>((start + count) * n));
  return emit<T>("slice_rows", {count, n}, std::move(out), {a.node()},
                 [start, n](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
                 });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> indices) {
  const std::size_t n = a.cols();
  std::vector<T> out(indices.size() * n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.rows())
      shape_error("gather_rows", "index " + std::to_string(indices[i]) + " out of " + a.shape().str());
    std::copy_n(a.data().data() + indices[i] * n, n, out.data() + i * n);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit<T>("gather_rows", {indices.size(), n}, std::move(out), {a.node()},
                 [n, idx = std::move(idx)](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < idx.size(); ++i)
                     for (std::size_t j = 0; j < n; ++j) g[idx[i] * n + j] += self.grad[i * n + j];
                 });
}

template <typename T>
Tensor<T> select_rows(std::span<const std::uint8_t> take_a, const Tensor<T>& a,
                      const Tensor<T>& b) {
  require_same("select_rows", a, b);
  if (take_a.size() != a.rows())
    shape_error("select_rows", "mask has " + std::to_string(take_a.size()) + " entries for " +
                                   a.shape().str());
  const std::size_t n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const T* src = (take_a[i] ? a : b).data().data() + i * n;
    std::copy_n(src, n, out.data() + i * n);
  }
  std::vector<std::uint8_t> mask(take_a.begin(), take_a.end());
  return emit<T>("select_rows", a.shape(), std::move(out), {a.node(), b.node()},
                 [n, mask = std::move(mask)](Node<T>& self) {
                   for (int which = 0; which < 2; ++which) {
                     auto& in = *self.inputs[which];
                     if (!in.requires_grad) continue;
                     auto g = in.ensure_grad();
                     for (std::size_t i = 0; i < mask.size(); ++i) {
                       if ((mask[i] != 0) != (which == 0)) continue;
                       for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j];
                     }
                   }
                 });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T s = T(0);
  for (T v : a.data()) s += v;
  return emit<T>("sum", {1, 1}, {s}, {a.node()}, [](Node<T>& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) shape_error("mean", "empty tensor");
  return scale(sum(a), T(1) / T(a.size()));
}

template <typename T>
Tensor<T> row_sum(const Tensor<T>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m, T(0));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += a.data()[i * n + j];
  return emit<T>("row_sum", {m, 1}, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& a, std::span<const std::size_t> indices) {
  if (indices.size() != a.rows())
    shape_error("pick", std::to_string(indices.size()) + " indices for " + a.shape().str());
  const std::size_t n = a.cols();
  std::vector<T> out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    if (indices[i] >= n) shape_error("pick", "column " + std::to_string(indices[i]) + " out of " + a.shape().str());
    out[i] = a.data()[i * n + indices[i]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit<T>("pick", {a.rows(), 1}, std::move(out), {a.node()},
                 [n, idx = std::move(idx)](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   for (std::size_t i = 0; i < idx.size(); ++i) g[i * n + idx[i]] += self.grad[i];
                 });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (targets.size() != logits.size())
    shape_error("bce_with_logits", std::to_string(targets.size()) + " targets for logits " +
                                       logits.shape().str());
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T z = logits.data()[i];
    out[i] = std::max(z, T(0)) - z * targets[i] + std::log1p(std::exp(-std::abs(z)));
  }
  std::vector<T> y(targets.begin(), targets.end());
  return emit<T>("bce_with_logits", logits.shape(), std::move(out), {logits.node()},
                 [y = std::move(y)](Node<T>& self) {
                   auto& in = *self.inputs[0];
                   auto g = in.ensure_grad();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const T z = in.value[i];
                     const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                           : std::exp(z) / (T(1) + std::exp(z));
                     g[i] += self.grad[i] * (s - y[i]);
                   }
                 });
}

template <typename T>
Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("cosine_rows", a, b);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(m), na(m), nb(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    const T* y = b.data().data() + i * n;
    T dot = T(0), xx = T(0), yy = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      dot += x[j] * y[j];
      xx += x[j] * x[j];
      yy += y[j] * y[j];
    }
    if (xx == T(0) || yy == T(0))
      throw DegenerateInputError("tensor", "cosine_rows: zero-norm vector in row " + std::to_string(i));
    na[i] = std::sqrt(xx);
    nb[i] = std::sqrt(yy);
    out[i] = dot / (na[i] * nb[i]);
  }
  return emit<T>("cosine_rows", {m, 1}, std::move(out), {a.node(), b.node()},
                 [m, n, na = std::move(na), nb = std::move(nb)](Node<T>& self) {
                   auto& A = *self.inputs[0];
                   auto& B = *self.inputs[1];
                   for (std::size_t i = 0; i < m; ++i) {
                     const T c = self.value[i];
                     const T gy = self.grad[i];
                     const T* x = A.value.data() + i * n;
                     const T* y = B.value.data() + i * n;
                     // d cos / dx = y/(|x||y|) - cos * x/|x|^2
                     if (A.requires_grad) {
                       auto g = A.ensure_grad();
                       for (std::size_t j = 0; j < n; ++j)
                         g[i * n + j] += gy * (y[j] / (na[i] * nb[i]) - c * x[j] / (na[i] * na[i]));
                     }
                     if (B.requires_grad) {
                       auto g = B.ensure_grad();
                       for (std::size_t j = 0; j < n; ++j)
                         g[i * n + j] += gy * (x[j] / (na[i] * nb[i]) - c * y[j] / (nb[i] * nb[i]));
                     }
                   }
                 });
}

template <typename T>
Tensor<T> mean_over_time(const Packed<T>& x) {
  const std::size_t n = x.data.cols();
  std::size_t total = 0;
  for (std::size_t l : x.lengths) {
    if (l == 0) shape_error("mean_over_time", "zero-length sequence");
    total += l;
  }
  if (total != x.data.rows())
    shape_error("mean_over_time", "lengths sum to " + std::to_string(total) + " but data is " +
                                      x.data.shape().str());
  const std::size_t b = x.lengths.size();
  std::vector<T> out(b * n, T(0));
  std::size_t row = 0;
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t t = 0; t < x.lengths[s]; ++t, ++row)
      for (std::size_t j = 0; j < n; ++j) out[s * n + j] += x.data.data()[row * n + j];
    for (std::size_t j = 0; j < n; ++j) out[s * n + j] /= T(x.lengths[s]);
  }
  return emit<T>("mean_over_time", {b, n}, std::move(out), {x.data.node()},
                 [n, lengths = x.lengths](Node<T>& self) {
                   auto g = self.inputs[0]->ensure_grad();
                   std::size_t row = 0;
                   for (std::size_t s = 0; s < lengths.size(); ++s) {
                     const T inv = T(1) / T(lengths[s]);
                     for (std::size_t t = 0; t < lengths[s]; ++t, ++row)
                       for (std::size_t j = 0; j < n; ++j) g[row * n + j] += self.grad[s * n + j] * inv;
                   }
                 });
}

template <typename T>
Packed<T> unfold(const Packed<T>& x, std::size_t width) {
  if (width == 0) shape_error("unfold", "zero width");
  const std::size_t c = x.data.cols();
  std::size_t total_in = 0, total_out = 0;
  std::vector<std::size_t> out_len;
  for (std::size_t l : x.lengths) {
    if (l == 0) shape_error("unfold", "zero-length sequence");
    total_in += l;
    const std::size_t padded = std::max(l, width);
    out_len.push_back(padded - width + 1);
    total_out += out_len.back();
  }
  if (total_in != x.data.rows())
    shape_error("unfold", "lengths sum to " + std::to_string(total_in) + " but data is " +
                              x.data.shape().str());
  const std::size_t wc = width * c;
  std::vector<T> out(total_out * wc, T(0));
  // source[r] = input row feeding flattened position r, or -1 for padding.
  std::vector<long> source(total_out * width, -1);
  std::size_t in_row = 0, out_row = 0;
  for (std::size_t s = 0; s < x.lengths.size(); ++s) {
    const std::size_t l = x.lengths[s];
    const std::size_t pad = l < width ? width - l : 0;
    for (std::size_t t = 0; t < out_len[s]; ++t, ++out_row) {
      for (std::size_t k = 0; k < width; ++k) {
        const std::size_t pos = t + k;  // position in the padded sequence
        if (pos < pad) continue;
        const std::size_t src = in_row + pos - pad;
        source[out_row * width + k] = static_cast<long>(src);
        std::copy_n(x.data.data().data() + src * c, c, out.data() + out_row * wc + k * c);
      }
    }
    in_row += l;
  }
  Tensor<T> data = emit<T>("unfold", {total_out, wc}, std::move(out), {x.data.node()},
                           [c, width, source = std::move(source)](Node<T>& self) {
                             auto g = self.inputs[0]->ensure_grad();
                             const std::size_t wc = width * c;
                             for (std::size_t r = 0; r < source.size(); ++r) {
                               if (source[r] < 0) continue;
                               const T* src = self.grad.data() + (r / width) * wc + (r % width) * c;
                               T* dst = g.data() + static_cast<std::size_t>(source[r]) * c;
                               for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                             }
                           });
  return Packed<T>{std::move(data), std::move(out_len)};
}

template <typename T>
Packed<T> conv1d(const Packed<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t width) {
  if (weight.rows() != width * x.data.cols())
    shape_error("conv1d", "weight " + weight.shape().str() + " does not fit width " +
                              std::to_string(width) + " over " + std::to_string(x.data.cols()) +
                              " input channels");
  Packed<T> cols = unfold(x, width);
  return Packed<T>{add_bias(matmul(cols.data, weight), bias), std::move(cols.lengths)};
}

#define AWE_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                       \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                                             \
  template Tensor<T> tanh(const Tensor<T>&);                                                \
  template Tensor<T> log_softmax(const Tensor<T>&);                                         \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, DropoutStream&);               \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                BatchNormStats<T>&, Mode, double, double);                  \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                               \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                               \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);           \
  template Tensor<T> select_rows(std::span<const std::uint8_t>, const Tensor<T>&,           \
                                 const Tensor<T>&);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> mean(const Tensor<T>&);                                                \
  template Tensor<T> row_sum(const Tensor<T>&);                                             \
  template Tensor<T> pick(const Tensor<T>&, std::span<const std::size_t>);                  \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);                 \
  template Tensor<T> cosine_rows(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> mean_over_time(const Packed<T>&);                                      \
  template Packed<T> unfold(const Packed<T>&, std::size_t);                                 \
  template Packed<T> conv1d(const Packed<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);

AWE_INSTANTIATE_OPS(float)
AWE_INSTANTIATE_OPS(double)

}  // namespace awe::ad
