#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "zhoi/matrix.hpp"

/// Minimal reverse-mode automatic differentiation over dense matrices.
///
/// A forward pass builds a DAG of `Node`s; `backward(root)` walks it in
/// reverse topological order. Parameters are long-lived leaf nodes whose
/// `grad` accumulates across backward calls until zeroed by the optimizer.
namespace zhoi::ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_ref() {
    if (grad.empty() && !value.empty()) grad = Matrix(value.rows(), value.cols());
    return grad;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& grad_ref() { return node_->grad_ref(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Non-differentiable value.
Var constant(Matrix m);
/// Trainable leaf.
Var leaf(Matrix m, bool requires_grad = true);

/// Runs reverse-mode accumulation from a 1x1 root.
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables graph construction in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- linear algebra -------------------------------------------------------
Var matmul(const Var& a, const Var& b);     // a(m,k) b(k,n)
Var matmul_nt(const Var& a, const Var& b);  // a(m,k) b(n,k)^T
Var transpose(const Var& a);

// ---- elementwise ----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // row is 1 x cols, broadcast down
Var mul_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var gelu(const Var& a);  // exact erf form
Var sigmoid(const Var& a);
Var abs(const Var& a);
Var square(const Var& a);

// ---- reductions -----------------------------------------------------------
Var sum(const Var& a);        // 1x1
Var mean(const Var& a);       // 1x1
Var mean_rows(const Var& a);  // 1 x cols

// ---- shape ----------------------------------------------------------------
Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& a, std::size_t start, std::size_t count);
Var slice_cols(const Var& a, std::size_t start, std::size_t count);
Var gather_rows(const Var& a, std::span<const std::size_t> rows);
/// Same storage reinterpreted as rows x cols.
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
/// Stack `times` copies of a vertically.
Var tile_rows(const Var& a, std::size_t times);
/// Repeat each row `times` consecutive times: row i -> rows [i*times, (i+1)*times).
Var repeat_rows(const Var& a, std::size_t times);
/// Row-wise sums: r x 1.
Var row_sums(const Var& a);
/// weights: G x L, values: (G*L) x d  ->  G x d, out[g] = sum_i weights[g,i] * values[g*L+i].
Var grouped_weighted_sum(const Var& weights, const Var& values);

// ---- normalization / attention -------------------------------------------
Var softmax_rows(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Column-wise normalization with batch statistics over rows (training-mode BN).
/// Writes the batch mean and biased variance when the pointers are non-null.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     Matrix* batch_mean, Matrix* batch_var);
/// Rows scaled to unit L2 norm; zero rows stay zero.
Var normalize_rows(const Var& a);
/// x stacks `batch` grids of h*w tokens each.
Var depthwise_conv3x3(const Var& x, const Var& weight, std::size_t h, std::size_t w,
                      std::size_t batch = 1);

/// Scaled dot-product attention split into `heads` column groups, applied
/// independently to `groups` stacked sequences: q is (groups*Lq) x d, k and v
/// are (groups*Lk) x d. When `head_mean_probs` is non-null it receives the
/// (groups*Lq) x Lk attention weights averaged over heads.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads,
              std::size_t groups = 1, Matrix* head_mean_probs = nullptr);

// ---- losses ---------------------------------------------------------------
/// Weighted mean negative log-likelihood of softmax(logits) at `targets`
/// (weights indexed by class; normalized by the summed target weights).
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets,
                  std::span<const double> class_weight);
/// Mean binary cross-entropy on logits.
Var bce_with_logits(const Var& logits, const Matrix& targets);
/// Summed sigmoid focal loss with binary targets.
Var sigmoid_focal_loss(const Var& logits, const Matrix& targets, double alpha, double gamma);
/// Row-wise generalized IoU between predicted center-form boxes (K x 4, cx cy w h)
/// and fixed center-form targets. Returns K x 1.
Var giou_rows(const Var& pred_center, const Matrix& target_center);

}  // namespace zhoi::ag
