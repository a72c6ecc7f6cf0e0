#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "poseformer/rng.hpp"
#include "poseformer/tensor.hpp"

namespace poseformer {

/// Whether new operations record a backward graph on this thread.
bool grad_enabled();

/// Disables graph recording for its lifetime (evaluation, inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads `self.grad` and accumulates into the parents' grads.
  std::function<void(Node& self)> backward_fn;

  void accumulate(const Tensor<T>& g);
  /// Grad buffer, allocated as zeros on first use.
  Tensor<T>& grad_buffer();
};

/// Handle to a value in the recorded computation graph. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad();
  /// A leaf has no recorded backward function.
  bool is_leaf() const { return !node_->backward_fn; }

  /// Reverse-mode sweep from this scalar. Gradients of every node reachable
  /// from here are reset to zero before accumulation starts.
  void backward();

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace ops {

/// a[..., m, k] x b[k, n], or batched a[B..., m, k] x b[B..., k, n].
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

/// x[..., k] x w[k, n] + bias[n]; `bias` may be undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// x + b where b's shape equals the trailing axes of x (bias, positional embedding).
template <typename T>
Var<T> add_broadcast(const Var<T>& x, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> sum(const Var<T>& x);

template <typename T>
Var<T> mean(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Numerically stable softmax along the last axis.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

/// Normalizes each last-axis slice to zero mean and unit variance, then gamma * xhat + beta.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);

/// Exact erf-form GELU.
template <typename T>
Var<T> gelu(const Var<T>& x);

/// Multi-head scaled dot-product attention on [B, N, H*d] inputs, with heads
/// living in contiguous d-wide column blocks. Returns [B, N, H*d]. When
/// `probs_out` is non-null, the attention weights [B, H, N, N] are copied there.
template <typename T>
Var<T> attention_heads(const Var<T>& q, const Var<T>& k, const Var<T>& v, std::size_t heads,
                       Tensor<T>* probs_out = nullptr);

/// y[b, :] = sum_i w[i] * x[b, i, :] for x[B, F, D], w[F].
template <typename T>
Var<T> weighted_sum_axis1(const Var<T>& x, const Var<T>& w);

/// Mean over axis 1 of x[B, F, D].
template <typename T>
Var<T> mean_axis1(const Var<T>& x);

/// Per-sample mask multiply: out[b, ...] = x[b, ...] * mask[b].
template <typename T>
Var<T> scale_rows(const Var<T>& x, std::vector<T> mask);

/// Mean Euclidean distance over all joints of pred/gt [..., J, 3]. The norm is
/// sqrt(|d|^2 + smoothing) so the gradient stays finite at coincident joints.
template <typename T>
Var<T> mpjpe_loss(const Var<T>& pred, const Var<T>& gt, T smoothing = T(1e-12));

/// Residual-branch stochastic depth: in training each sample's branch is
/// zeroed with probability `rate` and otherwise scaled by 1 / (1 - rate).
/// Identity in evaluation. Throws ConfigError unless 0 <= rate < 1.
template <typename T>
Var<T> stochastic_depth(const Var<T>& branch, double rate, bool training, Rng& rng);

}  // namespace ops
}  // namespace poseformer
