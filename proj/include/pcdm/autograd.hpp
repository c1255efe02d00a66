#pragma once

// Reverse-mode differentiation over the fixed layer vocabulary the denoiser
// needs. Every op records a closure on the result node; `backward` replays
// them in reverse topological order.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pcdm/tensor.hpp"

namespace pcdm {

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Leaf that accumulates gradients.
  static Var parameter(Tensor value);
  /// Leaf excluded from differentiation.
  static Var constant(Tensor value);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; zeros when nothing has flowed back yet.
  Tensor grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Populate gradients of every leaf reachable from a scalar `loss`.
void backward(const Var& loss);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Multiply by a learnable single-element tensor.
Var scale_by(const Var& a, const Var& s);
Var silu(const Var& a);

/// GroupNorm over a [C, ...] tensor with per-channel affine gamma/beta of shape [C].
Var group_norm(const Var& x, int64_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

/// x [C_in, H, W], w [C_out, C_in, k, k], b [C_out] (or undefined).
Var conv2d(const Var& x, const Var& w, const Var& b, int64_t stride, int64_t pad);
/// x [N], w [M, N], b [M].
Var linear(const Var& x, const Var& w, const Var& b);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax(const Var& x, int axis);
Var concat(const std::vector<Var>& parts, int axis);
Var reshape(const Var& x, Shape shape);
/// x [C, ...] plus e with C elements broadcast over the trailing axes.
Var broadcast_add(const Var& x, const Var& e);
/// Nearest-neighbour 2x upsampling of [C, H, W].
Var upsample_nearest2x(const Var& x);
Var sum(const Var& x);
/// sum((a - b)^2) as a scalar.
Var squared_error(const Var& a, const Var& b);

}  // namespace ops

}  // namespace pcdm
