#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "handcraft/common.hpp"
#include "handcraft/numcore/rng.hpp"

namespace handcraft::numcore {

using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

struct TensorNode;

/// Dense f64 tensor participating in reverse-mode differentiation.
///
/// A Tensor is a value-semantics handle on a graph node. Nodes created while
/// gradients are enabled remember their parents and a backward function;
/// calling backward() on a scalar propagates to every reachable node with
/// requires_grad set. Values are row-major; rank 1 and 2 are what the models
/// use, rank 3 appears only as shape metadata.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<Index> shape, bool requires_grad = false);
  static Tensor full(std::vector<Index> shape, Scalar value,
                     bool requires_grad = false);
  static Tensor from_matrix(const Matrix& m, bool requires_grad = false);
  static Tensor from_values(std::vector<Index> shape, std::vector<Scalar> values,
                            bool requires_grad = false);
  static Tensor scalar(Scalar v, bool requires_grad = false);
  // i.i.d. N(0, stddev^2) entries.
  static Tensor randn(std::vector<Index> shape, Rng& rng, Scalar stddev = 1.0,
                      bool requires_grad = false);
  // Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
  static Tensor xavier_uniform(Index rows, Index cols, Rng& rng,
                               bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<Index>& shape() const;
  Index rank() const;
  Index size() const;
  Index rows() const;  // rank-2 only
  Index cols() const;  // rank-2 only

  std::span<const Scalar> values() const;
  std::span<Scalar> mutable_values();  // in-place update (optimizers)
  Scalar value_at(Index i) const;
  Scalar value_at(Index i, Index j) const;
  ConstMatrixMap mat() const;  // rank-2 view
  Matrix to_matrix() const;    // rank-1 maps to a 1 x n matrix

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void clear_grad();

  // Reverse-mode pass from a size-1 tensor.
  void backward() const;

  // Value copy detached from the graph.
  Tensor detach() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor make_op_tensor(std::vector<Index> shape,
                               std::vector<Scalar> values,
                               std::vector<Tensor> parents,
                               std::function<void(TensorNode&)> backward_fn);
};

struct TensorNode {
  std::vector<Index> shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // sized on first use during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  Index size() const { return static_cast<Index>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

/// RAII switch that disables graph recording (evaluation passes).
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

// ---- differentiable ops ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor slice_rows(const Tensor& a, Index start, Index count);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// v broadcast across rows (size == cols) or down columns (size == rows).
// v may be rank 1 or a single row/column; only its total size is checked.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_rowvec(const Tensor& a, const Tensor& v);
Tensor mul_colvec(const Tensor& a, const Tensor& v);

// Zero mean / unit variance along `axis` (population variance, eps inside the
// sqrt), then the affine x_hat * gain + bias with gain/bias indexed along
// that axis.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  int axis, Scalar eps = 1e-5);

Tensor softmax_rows(const Tensor& x);
// Softmax cross-entropy of a single logits vector against a class index.
Tensor cross_entropy_logits(const Tensor& logits, Index label);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor rowwise_sum(const Tensor& x);  // rank-1 result, one entry per row

Tensor sqrt_elem(const Tensor& x);  // subgradient 0 at x == 0
Tensor exp_elem(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

// Inverted dropout; identity when !training or rate == 0.
Tensor dropout(const Tensor& x, Scalar rate, Rng& rng, bool training);

// ---- non-differentiable helpers ---------------------------------------------

Index argmax(const Tensor& x);
bool all_finite(const Tensor& x);
std::string shape_string(const std::vector<Index>& shape);

// Graph-node factory for composing custom differentiable ops outside this
// file. `backward_fn` reads the node's grad and accumulates into the parents'.
Tensor make_op_tensor(std::vector<Index> shape, std::vector<Scalar> values,
                      std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn);

// Accumulates into a parent's grad only when it participates in the pass.
template <typename Fn>
void accumulate_grad(TensorNode* parent, Fn&& fn) {
  if (!parent->requires_grad) return;
  parent->ensure_grad();
  fn(parent->grad);
}

}  // namespace handcraft::numcore
