#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ecgxai/core/error.hpp"

namespace ecgxai::tensor {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

/// Thread-local switch for recording operations. Tapes never cross threads.
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn && parents.empty(); }

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// RAII guard that suspends operation recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Dense row-major array with optional reverse-mode gradient tracking.
/// Copies are shallow handles onto the same storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodeT = detail::Node<T>;

  Tensor() : node_(std::make_shared<NodeT>()) {}

  Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<NodeT>()) {
    require(numel_of(shape) == data.size(),
            "Tensor: shape " + shape_str(shape) + " does not match " +
                std::to_string(data.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)));
  }

  static Tensor full(Shape shape, T value) {
    const std::size_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    require(numel() == 1, "Tensor::item on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const {
    return !node_->grad.empty() && node_->grad.size() == node_->data.size();
  }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Tensor sharing no graph history, same values (copied).
  Tensor detach() const { return Tensor(shape(), values()); }
  Tensor clone() const { return detach(); }

  const char* op_name() const { return node_->op; }
  bool is_leaf() const { return node_->is_leaf(); }

  const std::shared_ptr<NodeT>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<NodeT> node_;
};

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const auto* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

/// Builds an op output; wires it onto the graph when any input tracks grads.
template <typename T, typename Backward>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs,
                      Backward&& backward) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (any_requires_grad<T>(inputs)) {
    auto& node = *out.node();
    node.op = op;
    node.requires_grad = true;
    for (const auto* t : inputs) node.parents.push_back(t->node());
    node.backward_fn = std::forward<Backward>(backward);
  }
  return out;
}

/// Nodes reachable from root, ordered so every node precedes its parents.
template <typename T>
std::vector<Node<T>*> reverse_topological(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace detail

/// Propagates d(loss)/d(x) to every grad-tracking leaf reachable from loss.
/// Leaf gradients accumulate; the recorded graph is released afterwards.
template <typename T>
void backward(const Tensor<T>& loss) {
  auto* root = loss.node().get();
  require(loss.numel() == 1,
          "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  require(!root->consumed, "backward: graph already consumed by a previous backward pass");
  require(root->requires_grad, "backward: loss is not connected to any grad-tracking tensor");

  const auto order = detail::reverse_topological(root);
  // Releasing one node's parents must not free nodes still to be visited.
  std::vector<std::shared_ptr<detail::Node<T>>> keep_alive;
  keep_alive.reserve(order.size());
  for (auto* node : order)
    for (const auto& parent : node->parents) keep_alive.push_back(parent);
  root->ensure_grad()[0] += T(1);
  for (auto* node : order) {
    if (node->backward_fn) {
      node->backward_fn(*node);
      // Intermediate gradients are not retained.
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
  for (auto* node : order) {
    if (!node->is_leaf()) {
      node->backward_fn = nullptr;
      node->parents.clear();
      node->consumed = true;
    }
  }
}

}  // namespace ecgxai::tensor
