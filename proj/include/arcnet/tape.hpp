#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/errors.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

// Reverse-mode tape. Ops execute eagerly: each call computes its output,
// appends a node, and registers a closure that pushes the output gradient
// into the parents. Creation order is the topological order, so backward()
// is a single reverse sweep that visits each node exactly once.
//
// Every recorded value is checked for finiteness; a NaN/Inf output is an
// error state and throws NumericError naming the op.
template <typename S>
class TapeT {
 public:
  using Scalar = S;
  using NodeId = int;
  using BackwardFn = std::function<void(TapeT&, NodeId)>;

  // grad_enabled=false skips closure bookkeeping entirely (inference and
  // finite-difference re-evaluations).
  explicit TapeT(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  NodeId leaf(TensorT<S> value, bool requires_grad) {
    return push("leaf", std::move(value), grad_enabled_ && requires_grad, nullptr);
  }

  NodeId constant(TensorT<S> value) { return leaf(std::move(value), false); }

  // Record an op output. `parents` drive requires-grad propagation; the
  // closure runs during backward() with the node's own id, reads grad(id)
  // and accumulates into grad(parent) for each parent that requires_grad().
  NodeId record(const char* op_name, std::initializer_list<NodeId> parents, TensorT<S> value,
                BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_)
      for (const NodeId p : parents) needs = needs || nodes_[check(p)].needs;
    return push(op_name, std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  NodeId record(const char* op_name, const std::vector<NodeId>& parents, TensorT<S> value,
                BackwardFn backward) {
    bool needs = false;
    if (grad_enabled_)
      for (const NodeId p : parents) needs = needs || nodes_[check(p)].needs;
    return push(op_name, std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const TensorT<S>& value(NodeId id) const { return nodes_[check(id)].value; }

  bool requires_grad(NodeId id) const { return nodes_[check(id)].needs; }

  const char* op_name(NodeId id) const { return nodes_[check(id)].op; }

  std::size_t node_count() const { return nodes_.size(); }

  // Gradient buffer, zero-initialized to the value's shape on first touch.
  TensorT<S>& grad(NodeId id) {
    Node& n = nodes_[check(id)];
    if (!n.has_grad) {
      n.grad_buf = TensorT<S>::zeros(n.value.shape);
      n.has_grad = true;
    }
    return n.grad_buf;
  }

  bool has_grad(NodeId id) const { return nodes_[check(id)].has_grad; }

  // Copy of the accumulated gradient, zeros if backward never touched it.
  TensorT<S> grad_or_zero(NodeId id) const {
    const Node& n = nodes_[check(id)];
    return n.has_grad ? n.grad_buf : TensorT<S>::zeros(n.value.shape);
  }

  // Reverse sweep from a scalar root.
  void backward(NodeId root) {
    if (!grad_enabled_) throw ConfigError("backward() on a grad-disabled tape");
    if (value(root).size() != 1)
      throw ShapeError(std::string("backward root must be scalar, got shape ") +
                       shape_str(value(root).shape));
    grad(root).data[0] = S(1);
    for (NodeId id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.has_grad && n.back) n.back(*this, id);
    }
  }

 private:
  struct Node {
    TensorT<S> value;
    TensorT<S> grad_buf;
    bool has_grad = false;
    bool needs = false;
    const char* op = "leaf";
    BackwardFn back;
  };

  std::size_t check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw Error("invalid tape node id " + std::to_string(id));
    return static_cast<std::size_t>(id);
  }

  NodeId push(const char* op, TensorT<S> value, bool needs, BackwardFn back) {
    if (!value.all_finite())
      throw NumericError(std::string("non-finite values in output of op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.needs = needs;
    n.op = op;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using Tape = TapeT<float>;

}  // namespace arcnet
