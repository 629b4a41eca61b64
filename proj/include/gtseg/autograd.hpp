#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "gtseg/tensor.hpp"

namespace gtseg::ag {

// One vertex of the reverse-mode tape. Ops create a Node per output and
// record a closure that pushes self.grad into the parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backward;

  // Adds g into grad, allocating it on first use. No-op when the node does
  // not require grad.
  void accumulate(const Tensor &g);
  Tensor &grad_buffer();
};

class Var {
public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor &value() const { return node_->value; }
  Tensor &mutable_value() { return node_->value; }
  const Shape &shape() const { return node_->value.shape(); }
  int dim(std::size_t axis) const { return node_->value.dim(axis); }

  // Empty tensor when no gradient has reached this variable.
  const Tensor &grad() const { return node_->grad; }
  Tensor &grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node> &node() const { return node_; }

private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

// Disables tape recording for the enclosing scope.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

// Wraps an op output. The backward closure is kept only when grad mode is on
// and at least one input requires grad.
Var make_result(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node &)> backward);
Var make_result(Tensor value, const std::vector<Var> &inputs, std::function<void(Node &)> backward);

// Seeds d(root)/d(root) = 1 and runs the tape in reverse topological order.
// root must hold a single element.
void backward(const Var &root);

} // namespace gtseg::ag
