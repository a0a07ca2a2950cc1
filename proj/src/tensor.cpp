#include "awe/tensor.h"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "awe/error.h"

namespace awe::ad {

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_id{1};
}  // namespace

std::string Shape::str() const {
  return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
}

std::uint64_t next_node_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return from(shape, std::vector<T>(shape.size(), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  if (values.size() != shape.size())
    throw ShapeError("tensor", "shape " + shape.str() + " does not match " +
                                   std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->id = next_node_id();
  return Tensor(std::move(node));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1)
    throw ContractError("tensor", "item() on non-scalar tensor " + shape().str());
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() const {
  ad::backward(*this);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss) throw ContractError("tensor", "backward on an empty tensor");
  if (loss.size() != 1)
    throw ContractError("tensor", "backward needs a scalar loss, got " + loss.shape().str());
  if (!loss.requires_grad())
    throw ContractError("tensor", "loss does not depend on any tensor that requires grad");

  Node<T>* root = loss.node().get();
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen{root};
  std::vector<Node<T>*> stack{root};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
  for (Node<T>* n : order)
    if (n->backward_fn) n->grad.assign(n->value.size(), T(0));
  root->ensure_grad()[0] += T(1);
  for (Node<T>* n : order) {
    if (!n->backward_fn) continue;
    n->backward_fn(*n);
    std::vector<T>().swap(n->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace awe::ad
