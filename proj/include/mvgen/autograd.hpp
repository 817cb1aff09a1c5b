#pragma once

#include "mvgen/tensor.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace mvgen {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until the backward pass reaches this node
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this->grad into the parents that require it.
  std::function<void(Node&)> backward;

  void accumulate(Tensor<Scalar>&& g) {
    if (grad.empty()) {
      grad = std::move(g);
    } else {
      grad.array() += g.array();
    }
  }
};

/// Handle to a value in the recorded graph. Copies share the node.
template <typename Scalar>
class Var {
 public:
  Var() = default;

  static Var constant(Tensor<Scalar> value) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    return Var(std::move(node));
  }

  static Var parameter(Tensor<Scalar> value) {
    auto node = std::make_shared<Node<Scalar>>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
  }

  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  bool valid() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(Index axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Node<Scalar>* id() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

// Records an op result. If no input requires a gradient the result is a
// plain constant and `backward` is dropped.
template <typename Scalar, typename Backward>
Var<Scalar> record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                   Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::forward<Backward>(backward);
  }
  return Var<Scalar>(std::move(node));
}

/// Gradients of a scalar loss with respect to every leaf that requires one.
template <typename Scalar>
class Gradients {
 public:
  // Zero tensor of the parameter's shape when the leaf has no path to the loss.
  Tensor<Scalar> of(const Var<Scalar>& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) return Tensor<Scalar>(leaf.shape());
    return it->second;
  }
  bool contains(const Var<Scalar>& leaf) const { return grads_.count(leaf.id()) != 0; }

  std::unordered_map<const Node<Scalar>*, Tensor<Scalar>> grads_;
};

// Throws std::invalid_argument for a non-scalar loss and std::logic_error when
// the loss has no recorded path to any leaf requiring a gradient.
template <typename Scalar>
Gradients<Scalar> backward(const Var<Scalar>& loss);

}  // namespace mvgen
