#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "statuskt/errors.hpp"

namespace statuskt::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  // Empty until something is accumulated into it.
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require grad.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Handle to a node of the computation graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + to_string(shape));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const auto n = numel(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  /// Extent of an axis; negative axes count from the end.
  std::size_t dim(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const T> data() const { return node_->value; }
  /// Mutable view of the values; meant for leaves (optimizers, initialisers, checkpoints).
  std::span<T> mutable_data() { return node_->value; }
  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  T operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Reverse-mode sweep from this scalar; see Tape.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

/// The recorded operations reachable from a root, in topological order
/// (parents before children). Backward visits each node exactly once.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root) {
    Tape tape;
    tape.root_ = root.node();
    std::unordered_set<const Node<T>*> seen;
    // Iterative post-order DFS: (node, next parent index).
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* parent = node->parents[next++].get();
        if (seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  const std::vector<Node<T>*>& nodes() const { return order_; }

  /// Seeds d(root)/d(root) = 1 and propagates. Interior gradients are reset
  /// first; leaf gradients accumulate across calls until zero_grad().
  void backward() {
    if (root_->value.size() != 1) {
      throw ShapeError("backward() requires a scalar, got shape " + to_string(root_->shape));
    }
    for (Node<T>* n : order_) {
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    }
    root_->ensure_grad();
    root_->grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      Node<T>* n = *it;
      if (!n->is_leaf() && n->requires_grad) n->backward_fn(*n);
    }
  }

 private:
  Node<T>* root_ = nullptr;
  std::vector<Node<T>*> order_;
};

template <typename T>
void Tensor<T>::backward() const {
  Tape<T>::record(*this).backward();
}

namespace detail {

template <typename T>
inline void check_finite([[maybe_unused]] const std::vector<T>& v, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (const T x : v) assert(std::isfinite(x) && op);
#endif
}

/// Creates an op result. Parents that carry no gradient are not retained, and
/// when none do, the result is a constant leaf with no backward closure.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                      std::vector<std::shared_ptr<Node<T>>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

}  // namespace statuskt::ad
