#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sapnet/tensor.hpp"

namespace sapnet::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the computation graph. Interior nodes keep their parents and a
/// backward closure only when some ancestor requires a gradient.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  /// Returns the gradient buffer, allocating zeros on first use.
  Tensor& grad_buffer();
};

/// Handle to a graph node. Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Mutable access to a leaf's value (optimizer updates). Never use on interior nodes.
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::vector<int>& shape() const { return node_->value.shape(); }
  double item() const;

  Node* node() const { return node_.get(); }
  const NodePtr& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

/// Trainable leaf: gradients accumulate into it across backward passes.
Var parameter(Tensor value);
/// Leaf that never receives a gradient (inputs, frozen weights).
Var constant(Tensor value);
/// Same value as `v`, cut from the graph.
Var detach(const Var& v);

/// Builds an interior node. `backward` is recorded only if a parent requires grad
/// and grad mode is enabled.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root, seeding d(root)/d(root) = seed.
void backward(const Var& root, double seed = 1.0);

bool grad_enabled();

/// Disables graph recording in its scope (evaluation, metrics).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace sapnet::ad
