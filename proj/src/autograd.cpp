#include "mvgen/autograd.hpp"

#include <unordered_set>

namespace mvgen {

template <typename Scalar>
Gradients<Scalar> backward(const Var<Scalar>& loss) {
  if (!loss.valid() || loss.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " +
                                (loss.valid() ? shape_string(loss.shape()) : std::string("<null>")));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward on a detached graph: loss does not depend on any parameter");
  }

  // Iterative post-order DFS; parents are visited in recorded order so the
  // accumulation order is fixed.
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack;
  Node<Scalar>* root = loss.node().get();
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Tensor<Scalar>::constant(root->value.shape(), Scalar(1));
  Gradients<Scalar> out;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (node->grad.empty()) continue;
    if (node->backward) {
      node->backward(*node);
      node->grad = Tensor<Scalar>();
    } else {
      out.grads_.emplace(node, std::move(node->grad));
      node->grad = Tensor<Scalar>();
    }
  }
  return out;
}

template Gradients<float> backward(const Var<float>&);
template Gradients<double> backward(const Var<double>&);

}  // namespace mvgen
