#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dkcnet/tensor.hpp"

namespace dkcnet {

class Var;

namespace detail {

struct Node {
  Tensor4 value;
  Tensor4 grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `grad` of this node and accumulates into the parents that require grad.
  std::function<void(Node&)> backward;

  Tensor4& grad_buffer();
};

}  // namespace detail

/// Handle to a value in the recorded computation graph.
///
/// Leaves are created directly from a Tensor4; every differentiable op returns
/// a non-leaf whose node keeps its inputs alive until the handle is dropped.
/// Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor4 value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor4& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }

  /// In-place access for optimizers and checkpoint loading. Leaves only.
  Tensor4& mutable_value();

  bool has_grad() const { return !node_->grad.empty(); }
  /// Throws StateError if no gradient has been accumulated.
  const Tensor4& grad() const;
  /// Sets the gradient to zero, keeping the buffer.
  void zero_grad();

  /// Builds a non-leaf. `backward` is only attached when some input requires grad.
  static Var from_op(Tensor4 value, std::vector<Var> inputs,
                     std::function<void(detail::Node&)> backward);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a (1,1,1,1) loss. Gradients accumulate into leaves;
/// intermediate gradients are reset at the start of every sweep.
void backward(const Var& loss);

/// Gradient slot of an input of the op whose node is `self`, or nullptr when
/// that input does not require grad.
Tensor4* parent_grad(detail::Node& self, std::size_t index);
const Tensor4& parent_value(const detail::Node& self, std::size_t index);

}  // namespace dkcnet
