#include "chg2cap/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "chg2cap/error.hpp"

namespace chg2cap::ops {

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

constexpr double kFloor = 1e-300;  // log guard for probabilities

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (active_tape() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Returns the gradient buffer of `t` (allocating zeros) or nullptr when `t`
// does not take part in differentiation.
std::vector<double>* sink(const ImplPtr& t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->data.size(), 0.0);
  return &t->grad;
}

Tensor make_output(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data), false);
}

void record(std::string_view op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            Tape::BackwardFn fn) {
  out.set_requires_grad(true);
  std::vector<ImplPtr> in;
  in.reserve(inputs.size());
  for (const Tensor* t : inputs) in.push_back(t->impl());
  active_tape()->record(op, std::move(in), out.impl(), std::move(fn));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(m * p, 0.0);
  const auto& A = a.values();
  const auto& B = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = &c[i * p];
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = A[i * k + kk];
      if (aik == 0.0) continue;
      const double* __restrict brow = &B[kk * p];
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  Tensor out = make_output({m, p}, std::move(c));
  if (tracking({&a, &b})) {
    record("matmul", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), m, k, p](std::span<const double> g) {
      if (auto* ga = sink(ai)) {
        const auto& B = bi->data;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += g[i * p + j] * B[kk * p + j];
            (*ga)[i * k + kk] += acc;
          }
        }
      }
      if (auto* gb = sink(bi)) {
        const auto& A = ai->data;
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = A[i * k + kk];
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < p; ++j) (*gb)[kk * p + j] += aik * g[i * p + j];
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> t(m * n);
  const auto& A = a.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = A[i * n + j];
  Tensor out = make_output({n, m}, std::move(t));
  if (tracking({&a})) {
    record("transpose", {&a}, out, [ai = a.impl(), m, n](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> c(a.values());
  const auto& B = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += B[i];
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a, &b})) {
    record("add", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> c(a.values());
  const auto& B = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= B[i];
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a, &b})) {
    record("sub", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> c(a.values());
  const auto& B = b.values();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= B[i];
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a, &b})) {
    record("mul", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bi->data[i];
      if (auto* gb = sink(bi))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ai->data[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> c(a.values());
  for (auto& v : c) v *= s;
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a})) {
    record("scale", {&a}, out, [ai = a.impl(), s](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    });
  }
  return out;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  const std::size_t n = a.shape().back();
  if (bias.numel() != n || bias.rank() != 1) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) +
                         " does not match trailing dimension of " + shape_str(a.shape()));
  }
  std::vector<double> c(a.values());
  const auto& B = bias.values();
  const std::size_t rows = c.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) c[r * n + j] += B[j];
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a, &bias})) {
    record("add_row", {&a, &bias}, out, [ai = a.impl(), bi = bias.impl(), rows, n](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = sink(bi))
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) (*gb)[j] += g[r * n + j];
    });
  }
  return out;
}

Tensor add_col(const Tensor& a, const Tensor& col) {
  require_rank(a, 2, "add_col");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (col.rank() != 2 || col.dim(0) != m || col.dim(1) != 1) {
    throw DimensionError("add_col: column " + shape_str(col.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> c(a.values());
  const auto& C = col.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += C[i];
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a, &col})) {
    record("add_col", {&a, &col}, out, [ai = a.impl(), ci = col.impl(), m, n](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gc = sink(ci))
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j];
          (*gc)[i] += acc;
        }
    });
  }
  return out;
}

namespace {
thread_local ReluSignTrace* g_relu_trace = nullptr;
}  // namespace

ReluSignTrace::ReluSignTrace() : previous_(g_relu_trace) { g_relu_trace = this; }
ReluSignTrace::~ReluSignTrace() { g_relu_trace = previous_; }

void ReluSignTrace::replay(const std::vector<unsigned char>& signs) {
  if (g_relu_trace) g_relu_trace->signs_.insert(g_relu_trace->signs_.end(), signs.begin(), signs.end());
}

Tensor relu(const Tensor& a) {
  if (g_relu_trace)
    for (double v : a.values()) g_relu_trace->signs_.push_back(v > 0.0 ? 1 : 0);
  std::vector<double> c(a.values());
  for (auto& v : c) v = v > 0.0 ? v : 0.0;
  Tensor out = make_output(a.shape(), std::move(c));
  if (tracking({&a})) {
    record("relu", {&a}, out, [ai = a.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i)
          if (ai->data[i] > 0.0) (*ga)[i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Tensor out = make_output({1}, {s});
  if (tracking({&a})) {
    record("sum", {&a}, out, [ai = a.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (auto& v : *ga) v += g[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out = make_output(std::move(shape), a.values());
  if (tracking({&a})) {
    record("reshape", {&a}, out, [ai = a.impl()](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_rows");
  require_rank(b, 2, "concat_rows");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("concat_rows: column counts differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> c(a.values());
  c.insert(c.end(), b.values().begin(), b.values().end());
  Tensor out = make_output({a.dim(0) + b.dim(0), a.dim(1)}, std::move(c));
  if (tracking({&a, &b})) {
    record("concat_rows", {&a, &b}, out, [ai = a.impl(), bi = b.impl()](std::span<const double> g) {
      const std::size_t na = ai->data.size();
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
      if (auto* gb = sink(bi))
        for (std::size_t i = 0; i < bi->data.size(); ++i) (*gb)[i] += g[na + i];
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::size_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
  if (b.dim(0) != m) {
    throw DimensionError("concat_cols: row counts differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t n = na + nb;
  std::vector<double> c(m * n);
  const auto& A = a.values();
  const auto& B = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&A[i * na], na, &c[i * n]);
    std::copy_n(&B[i * nb], nb, &c[i * n + na]);
  }
  Tensor out = make_output({m, n}, std::move(c));
  if (tracking({&a, &b})) {
    record("concat_cols", {&a, &b}, out, [ai = a.impl(), bi = b.impl(), m, na, nb, n](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < na; ++j) (*ga)[i * na + j] += g[i * n + j];
      if (auto* gb = sink(bi))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < nb; ++j) (*gb)[i * nb + j] += g[i * n + na + j];
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_rows");
  if (begin >= end || end > a.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_str(a.shape()));
  }
  const std::size_t n = a.dim(1);
  std::vector<double> c(a.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                        a.values().begin() + static_cast<std::ptrdiff_t>(end * n));
  Tensor out = make_output({end - begin, n}, std::move(c));
  if (tracking({&a})) {
    record("slice_rows", {&a}, out, [ai = a.impl(), off = begin * n](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank(a, 2, "slice_cols");
  if (begin >= end || end > a.dim(1)) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of bounds for " + shape_str(a.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
  std::vector<double> c(m * w);
  const auto& A = a.values();
  for (std::size_t i = 0; i < m; ++i) std::copy_n(&A[i * n + begin], w, &c[i * w]);
  Tensor out = make_output({m, w}, std::move(c));
  if (tracking({&a})) {
    record("slice_cols", {&a}, out, [ai = a.impl(), m, n, w, begin](std::span<const double> g) {
      if (auto* ga = sink(ai))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) (*ga)[i * n + begin + j] += g[i * w + j];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "gather_rows");
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  std::vector<double> c(ids.size() * d);
  const auto& T = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(rows) + " rows");
    }
    std::copy_n(&T[static_cast<std::size_t>(ids[i]) * d], d, &c[i * d]);
  }
  Tensor out = make_output({ids.size(), d}, std::move(c));
  if (tracking({&table})) {
    record("gather_rows", {&table}, out,
           [ti = table.impl(), idv = std::vector<int>(ids.begin(), ids.end()), d](std::span<const double> g) {
             if (auto* gt = sink(ti))
               for (std::size_t i = 0; i < idv.size(); ++i)
                 for (std::size_t j = 0; j < d; ++j)
                   (*gt)[static_cast<std::size_t>(idv[i]) * d + j] += g[i * d + j];
           });
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> y(x.values());
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &y[i * n];
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
  Tensor out = make_output({m, n}, std::move(y));
  if (tracking({&x})) {
    record("softmax_rows", {&x}, out, [xi = x.impl(), yi = out.impl(), m, n](std::span<const double> g) {
      if (auto* gx = sink(xi)) {
        const auto& Y = yi->data;
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * Y[i * n + j];
          for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += Y[i * n + j] * (g[i * n + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (d < 2) throw DimensionError("layer_norm: degenerate normalized dimension of size 1");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " + std::to_string(d));
  }
  const auto& X = x.values();
  const auto& G = gain.values();
  const auto& B = bias.values();
  std::vector<double> xhat(m * d), inv_std(m), y(m * d);
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += X[i * d + j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = X[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (X[i * d + j] - mu) * inv_std[i];
      y[i * d + j] = xhat[i * d + j] * G[j] + B[j];
    }
  }
  Tensor out = make_output({m, d}, std::move(y));
  if (tracking({&x, &gain, &bias})) {
    record("layer_norm", {&x, &gain, &bias}, out,
           [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), xhat = std::move(xhat),
            inv_std = std::move(inv_std), m, d](std::span<const double> g) {
             if (auto* gg = sink(gi))
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[i * d + j] * xhat[i * d + j];
             if (auto* gb = sink(bi))
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[i * d + j];
             if (auto* gx = sink(xi)) {
               const auto& G = gi->data;
               const double inv_d = 1.0 / static_cast<double>(d);
               for (std::size_t i = 0; i < m; ++i) {
                 double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dxh = g[i * d + j] * G[j];
                   mean_dxhat += dxh;
                   mean_dxhat_xhat += dxh * xhat[i * d + j];
                 }
                 mean_dxhat *= inv_d;
                 mean_dxhat_xhat *= inv_d;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dxh = g[i * d + j] * G[j];
                   (*gx)[i * d + j] +=
                       inv_std[i] * (dxh - mean_dxhat - xhat[i * d + j] * mean_dxhat_xhat);
                 }
               }
             }
           });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const std::size_t h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), cout = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw DimensionError("conv2d: unsupported even kernel " + shape_str(kernel.shape()));
  }
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(2)) + " input channels, input is " +
                         shape_str(x.shape()));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t oh = h + 2 * padding - kh + 1, ow = w + 2 * padding - kw + 1;
  const auto& X = x.values();
  const auto& K = kernel.values();
  std::vector<double> y(oh * ow * cout, 0.0);
  const auto in_index = [h, w, padding](std::size_t oy, std::size_t dy, std::size_t ox, std::size_t dx,
                            std::size_t& iy, std::size_t& ix) {
    const auto sy = static_cast<std::ptrdiff_t>(oy + dy) - static_cast<std::ptrdiff_t>(padding);
    const auto sx = static_cast<std::ptrdiff_t>(ox + dx) - static_cast<std::ptrdiff_t>(padding);
    if (sy < 0 || sx < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx >= static_cast<std::ptrdiff_t>(w)) return false;
    iy = static_cast<std::size_t>(sy);
    ix = static_cast<std::size_t>(sx);
    return true;
  };
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* out = &y[(oy * ow + ox) * cout];
      for (std::size_t dy = 0; dy < kh; ++dy)
        for (std::size_t dx = 0; dx < kw; ++dx) {
          std::size_t iy = 0, ix = 0;
          if (!in_index(oy, dy, ox, dx, iy, ix)) continue;
          const double* in = &X[(iy * w + ix) * cin];
          const double* kk = &K[(dy * kw + dx) * cin * cout];
          for (std::size_t c = 0; c < cin; ++c) {
            const double v = in[c];
            if (v == 0.0) continue;
            for (std::size_t o = 0; o < cout; ++o) out[o] += v * kk[c * cout + o];
          }
        }
    }
  Tensor out = make_output({oh, ow, cout}, std::move(y));
  if (tracking({&x, &kernel})) {
    record("conv2d", {&x, &kernel}, out,
           [xi = x.impl(), ki = kernel.impl(), h, w, cin, kh, kw, cout, oh, ow, in_index](std::span<const double> g) {
             auto* gx = sink(xi);
             auto* gk = sink(ki);
             const auto& X = xi->data;
             const auto& K = ki->data;
             for (std::size_t oy = 0; oy < oh; ++oy)
               for (std::size_t ox = 0; ox < ow; ++ox) {
                 const double* go = &g[(oy * ow + ox) * cout];
                 for (std::size_t dy = 0; dy < kh; ++dy)
                   for (std::size_t dx = 0; dx < kw; ++dx) {
                     std::size_t iy = 0, ix = 0;
                     if (!in_index(oy, dy, ox, dx, iy, ix)) continue;
                     const std::size_t xbase = (iy * w + ix) * cin;
                     const std::size_t kbase = (dy * kw + dx) * cin * cout;
                     for (std::size_t c = 0; c < cin; ++c) {
                       double acc = 0.0;
                       for (std::size_t o = 0; o < cout; ++o) {
                         acc += go[o] * K[kbase + c * cout + o];
                         if (gk) (*gk)[kbase + c * cout + o] += X[xbase + c] * go[o];
                       }
                       if (gx) (*gx)[xbase + c] += acc;
                     }
                   }
               }
           });
  }
  return out;
}

Tensor cosine_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "cosine_rows");
  require_same_shape(a, b, "cosine_rows");
  const std::size_t m = a.dim(0), d = a.dim(1);
  const auto& A = a.values();
  const auto& B = b.values();
  std::vector<double> c(m, 0.0), na(m), nb(m);
  for (std::size_t i = 0; i < m; ++i) {
    double dot = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += A[i * d + j] * B[i * d + j];
      aa += A[i * d + j] * A[i * d + j];
      bb += B[i * d + j] * B[i * d + j];
    }
    na[i] = std::sqrt(aa);
    nb[i] = std::sqrt(bb);
    if (na[i] < kCosineNormFloor || nb[i] < kCosineNormFloor) continue;
    c[i] = dot / (na[i] * nb[i]);
  }
  Tensor out = make_output({m, 1}, c);
  if (tracking({&a, &b})) {
    record("cosine_rows", {&a, &b}, out,
           [ai = a.impl(), bi = b.impl(), c = std::move(c), na = std::move(na), nb = std::move(nb), m,
            d](std::span<const double> g) {
             auto* ga = sink(ai);
             auto* gb = sink(bi);
             const auto& A = ai->data;
             const auto& B = bi->data;
             for (std::size_t i = 0; i < m; ++i) {
               if (na[i] < kCosineNormFloor || nb[i] < kCosineNormFloor) continue;
               const double inv_ab = 1.0 / (na[i] * nb[i]);
               for (std::size_t j = 0; j < d; ++j) {
                 const double aj = A[i * d + j], bj = B[i * d + j];
                 if (ga) (*ga)[i * d + j] += g[i] * (bj * inv_ab - c[i] * aj / (na[i] * na[i]));
                 if (gb) (*gb)[i * d + j] += g[i] * (aj * inv_ab - c[i] * bj / (nb[i] * nb[i]));
               }
             }
           });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, bool causal,
                 std::vector<double>* weights) {
  require_rank(q, 2, "attention");
  require_rank(k, 2, "attention");
  require_rank(v, 2, "attention");
  const std::size_t n = q.dim(0), s = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != s) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  if (causal && n > s) throw DimensionError("attention: causal mask needs at least as many keys as queries");
  const std::size_t dk = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  const auto& Q = q.values();
  const auto& K = k.values();
  const auto& V = v.values();
  std::vector<double> probs(heads * n * s, 0.0);
  std::vector<double> o(n * d, 0.0);
  std::vector<double> kt(dk * s);  // this head's keys, transposed
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t c0 = hd * dk;
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t c = 0; c < dk; ++c) kt[c * s + j] = K[j * d + c0 + c];
    for (std::size_t i = 0; i < n; ++i) {
      double* __restrict p = &probs[(hd * n + i) * s];
      const std::size_t visible = causal ? i + 1 : s;
      for (std::size_t c = 0; c < dk; ++c) {
        const double qc = Q[i * d + c0 + c];
        const double* __restrict krow = &kt[c * s];
        for (std::size_t j = 0; j < visible; ++j) p[j] += qc * krow[j];
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] *= sc;
        mx = std::max(mx, p[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      for (std::size_t j = 0; j < visible; ++j) p[j] /= z;
      for (std::size_t j = 0; j < visible; ++j) {
        const double pj = p[j];
        for (std::size_t c = 0; c < dk; ++c) o[i * d + c0 + c] += pj * V[j * d + c0 + c];
      }
    }
  }
  if (weights) *weights = probs;
  Tensor out = make_output({n, d}, std::move(o));
  if (tracking({&q, &k, &v})) {
    record("attention", {&q, &k, &v}, out,
           [qi = q.impl(), ki = k.impl(), vi = v.impl(), probs = std::move(probs), n, s, d, dk, heads, sc,
            causal](std::span<const double> g) {
             auto* gq = sink(qi);
             auto* gk = sink(ki);
             auto* gv = sink(vi);
             const auto& Q = qi->data;
             const auto& K = ki->data;
             const auto& V = vi->data;
             std::vector<double> dp(s);
             for (std::size_t hd = 0; hd < heads; ++hd) {
               const std::size_t c0 = hd * dk;
               for (std::size_t i = 0; i < n; ++i) {
                 const double* p = &probs[(hd * n + i) * s];
                 const std::size_t visible = causal ? i + 1 : s;
                 double dot = 0.0;
                 for (std::size_t j = 0; j < visible; ++j) {
                   double acc = 0.0;
                   for (std::size_t c = 0; c < dk; ++c) acc += g[i * d + c0 + c] * V[j * d + c0 + c];
                   dp[j] = acc;
                   dot += acc * p[j];
                   if (gv)
                     for (std::size_t c = 0; c < dk; ++c) (*gv)[j * d + c0 + c] += p[j] * g[i * d + c0 + c];
                 }
                 for (std::size_t j = 0; j < visible; ++j) {
                   const double ds = p[j] * (dp[j] - dot) * sc;
                   if (ds == 0.0) continue;
                   for (std::size_t c = 0; c < dk; ++c) {
                     if (gq) (*gq)[i * d + c0 + c] += ds * K[j * d + c0 + c];
                     if (gk) (*gk)[j * d + c0 + c] += ds * Q[i * d + c0 + c];
                   }
                 }
               }
             }
           });
  }
  return out;
}

Tensor nll_loss(const Tensor& probs, std::span<const int> targets) {
  require_rank(probs, 2, "nll_loss");
  const std::size_t n = probs.dim(0), m = probs.dim(1);
  if (targets.size() != n) {
    throw DimensionError("nll_loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " probability rows");
  }
  const auto& P = probs.values();
  std::size_t count = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0) continue;
    if (static_cast<std::size_t>(targets[i]) >= m) {
      throw DimensionError("nll_loss: target id " + std::to_string(targets[i]) + " outside " +
                           std::to_string(m) + " classes");
    }
    total -= std::log(std::max(P[i * m + static_cast<std::size_t>(targets[i])], kFloor));
    ++count;
  }
  if (count == 0) throw ContractError("nll_loss: no counted target positions");
  Tensor out = make_output({1}, {total / static_cast<double>(count)});
  if (tracking({&probs})) {
    record("nll_loss", {&probs}, out,
           [pi = probs.impl(), tv = std::vector<int>(targets.begin(), targets.end()), m,
            count](std::span<const double> g) {
             if (auto* gp = sink(pi)) {
               const double w = g[0] / static_cast<double>(count);
               for (std::size_t i = 0; i < tv.size(); ++i) {
                 if (tv[i] < 0) continue;
                 const std::size_t idx = i * m + static_cast<std::size_t>(tv[i]);
                 (*gp)[idx] -= w / std::max(pi->data[idx], kFloor);
               }
             }
           });
  }
  return out;
}

}  // namespace chg2cap::ops
