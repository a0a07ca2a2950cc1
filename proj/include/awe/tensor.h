#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace awe::ad {

// Tensors are 2-D (rows x cols); vectors are 1 x n, scalars 1 x 1. Higher-rank
// parameters (conv kernels) are stored flattened.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  // Creation order; a node's inputs always have smaller ids, so sorting by
  // id gives a topological order of the tape.
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads. Empty for
  // leaves.
  std::function<void(Node&)> backward_fn;

  std::span<T> ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

std::uint64_t next_node_id();

// Handle to a node on the tape. Copies share the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v) { return from({1, 1}, {v}); }

  explicit operator bool() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // For optimizers and initializers; not for tensors that are inputs of a
  // live graph.
  std::span<T> mutable_data() { return node_->value; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  // New leaf holding a copy of the values.
  Tensor detach() const { return from(shape(), node_->value, false); }
  void backward() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; interior gradients are rebuilt on every call.
template <typename T>
void backward(const Tensor<T>& loss);

// Recording switch (thread-local). With recording off, ops produce plain
// leaves and no tape is kept.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Counter-based source of dropout masks: the mask of a call depends only on
// (seed, counter), so forward passes are reproducible and resumable.
class DropoutStream {
 public:
  explicit DropoutStream(std::uint64_t seed = 0, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}
  // Reserves n consecutive counter values and returns the first.
  std::uint64_t reserve(std::size_t n) {
    const std::uint64_t first = counter_;
    counter_ += n;
    return first;
  }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

enum class Mode { kTrain, kEval };

}  // namespace awe::ad
