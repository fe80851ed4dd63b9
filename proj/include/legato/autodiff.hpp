#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "legato/tensor.hpp"

namespace legato {

/// Thread-local recording switch. When off, ops compute values only and the
/// returned nodes carry no parents or backward rules.
bool autograd_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One value in the recorded computation graph. The backward rule reads
/// this node's accumulated gradient and adds each parent's contribution.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_live = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Tensor& g);
  void zero_grad();
};

/// Value-semantic handle to a graph node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad);
  static Var constant(Tensor value) { return leaf(std::move(value), false); }

  bool defined() const { return n_ != nullptr; }
  const Tensor& value() const { return n_->value; }
  Tensor& value_mut() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad_live; }
  bool requires_grad() const { return n_->requires_grad; }
  void accumulate_grad(const Tensor& g) { n_->accumulate(g); }
  void zero_grad() { n_->zero_grad(); }
  const NodePtr& node() const { return n_; }

 private:
  NodePtr n_;
};

// Elementwise; shapes must match, or b's shape may be a trailing suffix of
// a's shape (the suffix operand is broadcast over a's leading axes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);

Var scale(const Var& a, double c);

Var matmul(const Var& a, const Var& b);       // [M,K] x [K,N]
Var matmul_last(const Var& a, const Var& w);  // [B,M,K] x [K,N], per batch
Var bmm(const Var& a, const Var& b);          // [B,M,K] x [B,K,N]

Var transpose(const Var& a);       // 2-d
Var transpose_last(const Var& a);  // 3-d, swaps the last two axes
Var reshape(const Var& a, std::vector<std::size_t> shape);
Var concat_last(const Var& a, const Var& b);  // equal shapes except last axis

Var relu(const Var& a);
Var leaky_relu(const Var& a);  // negative slope fixed at 0.01
Var tanh_op(const Var& a);
Var sigmoid(const Var& a);
Var abs_op(const Var& a);
Var sqrt_op(const Var& a);
Var rsqrt(const Var& a);
Var clamp_min(const Var& a, double floor);

/// Softmax over the last axis; each row of the result sums to one.
Var softmax_rows(const Var& a);

/// Rows (last axis) scaled to unit L2 norm; norms are clamped below by
/// 1e-12 so zero rows map to zero.
Var l2_normalize_rows(const Var& a);

Var sum_all(const Var& a);   // -> scalar
Var mean_all(const Var& a);  // -> scalar
Var sum_last(const Var& a);  // reduce the last axis
Var mean_axis0(const Var& a);  // reduce the leading axis
Var mean_axis1(const Var& a);  // [B,M,N] -> [B,N]

Var stack_axis1(const std::vector<Var>& xs);   // K x [N,D] -> [N,K,D]
Var slice_axis1(const Var& a, std::size_t k);  // [N,K,D] -> [N,D]

/// Sum of squared differences, as a scalar.
Var sse(const Var& a, const Var& b);

/// Reverse-mode sweep from a scalar root. Gradients accumulate additively;
/// clearing them is the caller's (optimizer's) responsibility.
void backward(const Var& root);

}  // namespace legato
