#include "dkcnet/autograd.hpp"

#include <unordered_set>

#include "dkcnet/errors.hpp"

namespace dkcnet {

Tensor4& detail::Node::grad_buffer() {
  if (grad.empty()) grad = Tensor4(value.shape(), 0.0);
  return grad;
}

Var::Var(Tensor4 value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor4& Var::mutable_value() {
  if (!is_leaf()) throw StateError("mutable_value() on a non-leaf tensor");
  return node_->value;
}

const Tensor4& Var::grad() const {
  if (node_->grad.empty()) throw StateError("no gradient recorded for tensor " + shape().str());
  return node_->grad;
}

void Var::zero_grad() {
  if (!node_->grad.empty()) node_->grad.fill(0.0);
}

Var Var::from_op(Tensor4 value, std::vector<Var> inputs,
                 std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

Tensor4* parent_grad(detail::Node& self, std::size_t index) {
  auto& p = self.parents.at(index);
  if (!p->requires_grad) return nullptr;
  return &p->grad_buffer();
}

const Tensor4& parent_value(const detail::Node& self, std::size_t index) {
  return self.parents.at(index)->value;
}

void backward(const Var& loss) {
  if (!(loss.shape() == Shape{1, 1, 1, 1})) {
    throw ArgumentError("backward() needs a scalar loss, got " + loss.shape().str());
  }
  if (!loss.requires_grad()) throw StateError("loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (node->backward) node->grad_buffer().fill(0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace dkcnet
