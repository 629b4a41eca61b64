#include "gtseg/autograd.hpp"

#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace gtseg::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

void Node::accumulate(const Tensor &g) {
  if (!requires_grad)
    return;
  if (grad.empty()) {
    check_same_shape(value, g, "Node::accumulate");
    grad = g;
  } else {
    grad.add_(g);
  }
}

Tensor &Node::grad_buffer() {
  if (grad.empty())
    grad = Tensor::zeros_like(value);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, const std::vector<Var> &inputs, std::function<void(Node &)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const Var &in : inputs)
      any = any || (in.defined() && in.requires_grad());
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Var &in : inputs)
        node->parents.push_back(in.node());
      node->backward = std::move(backward);
    }
  }
  return Var(std::move(node));
}

Var make_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node &)> backward) {
  return make_result(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

void backward(const Var &root) {
  if (!root.defined() || root.value().numel() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar");
  if (!root.requires_grad())
    return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<std::pair<Node *, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto &[node, next] = stack.back();
    if (next < node->parents.size()) {
      Node *parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second)
        stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->accumulate(Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *node = *it;
    if (node->backward && !node->grad.empty())
      node->backward(*node);
  }
}

} // namespace gtseg::ag
