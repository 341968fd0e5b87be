#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "chg2cap/tensor.hpp"

// Differentiable tensor operations. Each op records itself on the active
// tape when any input requires a gradient; with no active tape the ops are
// plain forward computations.
namespace chg2cap::ops {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kCosineNormFloor = 1e-12;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// Adds `bias` (shape [n]) to every length-n row of `a`; `a` may have any
/// rank whose trailing dimension is n.
Tensor add_row(const Tensor& a, const Tensor& bias);
/// Adds column `col` (shape [m x 1]) across every column of `a` [m x n].
Tensor add_col(const Tensor& a, const Tensor& col);
Tensor relu(const Tensor& a);

/// While alive, every relu call on this thread appends the sign pattern
/// (input > 0) of its input. grad_check uses it to detect finite differences
/// that cross a relu boundary.
class ReluSignTrace {
 public:
  ReluSignTrace();
  ~ReluSignTrace();
  ReluSignTrace(const ReluSignTrace&) = delete;
  ReluSignTrace& operator=(const ReluSignTrace&) = delete;

  const std::vector<unsigned char>& signs() const { return signs_; }

  /// Appends previously captured signs to the active trace, if any. Lets a
  /// memoized computation report the relus it skipped.
  static void replay(const std::vector<unsigned char>& signs);

 private:
  friend Tensor relu(const Tensor& a);
  std::vector<unsigned char> signs_;
  ReluSignTrace* previous_;
};

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Row lookup: out[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const int> ids);

/// Numerically stable row softmax (per-row max subtraction).
Tensor softmax_rows(const Tensor& x);
/// Per-row normalization with epsilon inside the square root, then affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
/// Shape-preserving 2D cross-correlation. x: [h x w x cin],
/// kernel: [kh x kw x cin x cout], kh/kw odd, padding = (k - 1) / 2.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding);
/// Per-row cosine similarity, [m x d] x [m x d] -> [m x 1]. Rows whose norm
/// falls below kCosineNormFloor score 0.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

/// Multi-head scaled dot-product attention without projections.
/// q: [n x d], k, v: [s x d]; head l uses columns [l*d/heads, (l+1)*d/heads).
/// With `causal`, query i only sees keys j <= i (requires n <= s).
/// When `weights` is non-null it receives the softmax weights laid out as
/// [heads][n][s].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 bool causal, std::vector<double>* weights = nullptr);

/// Mean negative log-likelihood of probability rows. targets[i] < 0 marks a
/// row that is excluded from the loss.
Tensor nll_loss(const Tensor& probs, std::span<const int> targets);

}  // namespace chg2cap::ops
