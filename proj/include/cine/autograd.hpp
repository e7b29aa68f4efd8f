#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cine/tensor.hpp"

namespace cine::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// A value in the computation graph. Non-leaf nodes hold the closure that
/// propagates their gradient to their parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  /// Adds g to the gradient, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
  const Tensor& parent_value(std::size_t i) const { return parents[i]->value; }
  bool parent_needs_grad(std::size_t i) const { return parents[i]->requires_grad; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const NodePtr& node() const { return node_; }

  /// Reverse sweep from a scalar (seed 1) or with an explicit seed gradient.
  void backward() const;
  void backward(const Tensor& seed) const;
  void zero_grad() const { node_->grad = Tensor(); }
  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

 private:
  NodePtr node_;
};

/// Builds the output node of an op. Records parents and the backward closure
/// only when gradients are enabled and some input requires them.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

/// Global switch for graph recording.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Records the discrete branch decisions of non-smooth ops (ReLU signs,
/// pooling argmax, bilinear cell indices, clamps) into a running hash while
/// active. Finite-difference checks compare signatures to skip coordinates
/// where the perturbation crosses a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t signature() const;
  static bool active();
  static void record(std::uint64_t decision);

 private:
  bool previous_;
  std::uint64_t previous_hash_;
};

}  // namespace cine::nn
