#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "adaodm/tensor.hpp"

namespace adaodm {

/// Handle to a value recorded on a Tape.
struct Value {
  std::uint32_t idx = UINT32_MAX;
  bool valid() const { return idx != UINT32_MAX; }
};

/// Reverse-mode gradient tape.
///
/// Operations append nodes in creation order, so parents always precede
/// children and a reverse index sweep is a reverse topological visit.
/// Gradient buffers are re-zeroed at the start of every backward().
class Tape {
 public:
  using Backprop = std::function<void(Tape&)>;

  Value push(Tensor value) {
    nodes_.push_back(Node{std::move(value), Tensor{}, nullptr});
    nodes_.back().grad = Tensor::zeros(nodes_.back().value.shape());
    return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Value leaf(Tensor value) { return push(std::move(value)); }

  void set_backprop(Value v, Backprop fn) { nodes_.at(v.idx).backprop = std::move(fn); }

  const Tensor& value(Value v) const { return nodes_.at(v.idx).value; }
  double scalar(Value v) const {
    const Tensor& t = value(v);
    if (!t.is_scalar()) throw std::logic_error("Tape::scalar: node is not a scalar");
    return t[0];
  }

  const Tensor& grad(Value v) const { return nodes_.at(v.idx).grad; }
  Tensor& grad_mut(Value v) { return nodes_.at(v.idx).grad; }

  std::size_t size() const { return nodes_.size(); }

  /// Accumulates d(root)/d(node) into every node's gradient buffer.
  /// root must be a scalar.
  void backward(Value root) {
    if (!root.valid() || root.idx >= nodes_.size()) {
      throw std::logic_error("Tape::backward: invalid root");
    }
    if (!nodes_[root.idx].value.is_scalar()) {
      throw std::logic_error("Tape::backward: root is not a scalar");
    }
    for (auto& n : nodes_) n.grad.fill(0.0);
    nodes_[root.idx].grad[0] = 1.0;
    for (std::size_t i = root.idx + 1; i-- > 0;) {
      if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backprop backprop;  // null for leaves
  };

  std::vector<Node> nodes_;
};

}  // namespace adaodm
