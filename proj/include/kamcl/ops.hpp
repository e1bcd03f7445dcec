#pragma once

// The closed set of differentiable operations the model is written in.
// Every op checks shapes, computes its output in double precision and
// records a backward rule on the inputs' tape.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "kamcl/csr.hpp"
#include "kamcl/error.hpp"
#include "kamcl/matrix.hpp"
#include "kamcl/tape.hpp"

namespace kamcl::ad {

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ContractError(std::string(op) + ": " + what);
}

inline Tape& same_tape(const char* op, Var a) {
  require(a.valid(), op, "invalid Var");
  return *a.tape();
}

inline Tape& same_tape(const char* op, Var a, Var b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), op, "inputs live on different tapes");
  return *a.tape();
}

inline std::string shapes(const Matrix& a, const Matrix& b) { return a.shape_string() + " vs " + b.shape_string(); }

}  // namespace detail

/// Numerically stable log(sigmoid(x)).
inline double log_sigmoid_value(double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape("add", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.same_shape(y), "add", detail::shapes(x, y));
  Matrix out = x;
  out.add_scaled(y);
  return t.record("add", std::move(out), [a, b](Tape& t, const Matrix& g) {
    t.grad_slot(a).add_scaled(g);
    t.grad_slot(b).add_scaled(g);
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape("sub", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.same_shape(y), "sub", detail::shapes(x, y));
  Matrix out = x;
  out.add_scaled(y, -1.0);
  return t.record("sub", std::move(out), [a, b](Tape& t, const Matrix& g) {
    t.grad_slot(a).add_scaled(g);
    t.grad_slot(b).add_scaled(g, -1.0);
  });
}

/// Hadamard product of equal-shape inputs.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape("mul", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.same_shape(y), "mul", detail::shapes(x, y));
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return t.record("mul", std::move(out), [a, b](Tape& t, const Matrix& g) {
    const Matrix &x = t.value(a), &y = t.value(b);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    Matrix& gb = t.grad_slot(b);
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
  });
}

/// Multiplies every row of `a` (n x c) elementwise by the row vector `r` (1 x c).
inline Var mul_row(Var a, Var r) {
  Tape& t = detail::same_tape("mul_row", a, r);
  const Matrix &x = a.value(), &v = r.value();
  detail::require(v.rows() == 1 && v.cols() == x.cols(), "mul_row", detail::shapes(x, v));
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(i, c) * v[c];
  return t.record("mul_row", std::move(out), [a, r](Tape& t, const Matrix& g) {
    const Matrix &x = t.value(a), &v = t.value(r);
    Matrix& ga = t.grad_slot(a);
    Matrix& gr = t.grad_slot(r);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        ga(i, c) += g(i, c) * v[c];
        gr[c] += g(i, c) * x(i, c);
      }
  });
}

inline Var scale(Var a, double s) {
  Tape& t = detail::same_tape("scale", a);
  Matrix out = a.value();
  for (auto& v : out.values()) v *= s;
  return t.record("scale", std::move(out), [a, s](Tape& t, const Matrix& g) { t.grad_slot(a).add_scaled(g, s); });
}

/// Scales row i of `a` by the constant weights[i].
inline Var scale_rows(Var a, std::vector<double> weights) {
  Tape& t = detail::same_tape("scale_rows", a);
  const Matrix& x = a.value();
  detail::require(weights.size() == x.rows(), "scale_rows",
                  std::to_string(weights.size()) + " weights for " + x.shape_string());
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(i, c) * weights[i];
  return t.record("scale_rows", std::move(out), [a, w = std::move(weights)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(i, c) += g(i, c) * w[i];
  });
}

/// sum_k weights[k] * inputs[k] over equal-shape inputs.
inline Var weighted_sum(std::span<const Var> inputs, std::span<const double> weights) {
  detail::require(!inputs.empty(), "weighted_sum", "no inputs");
  detail::require(inputs.size() == weights.size(), "weighted_sum",
                  std::to_string(inputs.size()) + " inputs vs " + std::to_string(weights.size()) + " weights");
  Tape& t = detail::same_tape("weighted_sum", inputs[0]);
  const Matrix& first = inputs[0].value();
  Matrix out(first.rows(), first.cols());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    detail::same_tape("weighted_sum", inputs[0], inputs[k]);
    detail::require(inputs[k].value().same_shape(first), "weighted_sum", detail::shapes(first, inputs[k].value()));
    out.add_scaled(inputs[k].value(), weights[k]);
  }
  std::vector<Var> in(inputs.begin(), inputs.end());
  std::vector<double> w(weights.begin(), weights.end());
  return t.record("weighted_sum", std::move(out), [in = std::move(in), w = std::move(w)](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < in.size(); ++k) t.grad_slot(in[k]).add_scaled(g, w[k]);
  });
}

inline Var log_sigmoid(Var a) {
  Tape& t = detail::same_tape("log_sigmoid", a);
  Matrix out = a.value();
  for (auto& v : out.values()) v = log_sigmoid_value(v);
  return t.record("log_sigmoid", std::move(out), [a](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * sigmoid_value(-x[i]);
  });
}

// ---------------------------------------------------------------------------
// Indexing and structure

inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  Tape& t = detail::same_tape("gather_rows", a);
  const Matrix& x = a.value();
  Matrix out(index.size(), x.cols());
  for (std::size_t k = 0; k < index.size(); ++k) {
    detail::require(index[k] < x.rows(), "gather_rows",
                    "index " + std::to_string(index[k]) + " out of range for " + x.shape_string());
    auto src = x.row(index[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return t.record("gather_rows", std::move(out), [a, idx = std::move(index)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto dst = ga.row(idx[k]);
      auto src = g.row(k);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

/// Output row g is the mean of a's rows listed in groups.row(g); empty groups give zero rows.
/// Members are summed in stored order.
inline Var segment_mean(Var a, Csr groups) {
  Tape& t = detail::same_tape("segment_mean", a);
  const Matrix& x = a.value();
  Matrix out(groups.num_rows(), x.cols());
  for (std::size_t r = 0; r < groups.num_rows(); ++r) {
    auto members = groups.row(r);
    if (members.empty()) continue;
    auto dst = out.row(r);
    for (auto m : members) {
      detail::require(m < x.rows(), "segment_mean",
                      "member " + std::to_string(m) + " out of range for " + x.shape_string());
      auto src = x.row(m);
      for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (auto& v : dst) v *= inv;
  }
  return t.record("segment_mean", std::move(out), [a, groups = std::move(groups)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t r = 0; r < groups.num_rows(); ++r) {
      auto members = groups.row(r);
      if (members.empty()) continue;
      const double inv = 1.0 / static_cast<double>(members.size());
      auto src = g.row(r);
      for (auto m : members) {
        auto dst = ga.row(m);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += inv * src[c];
      }
    }
  });
}

/// Concatenation along the feature (column) axis.
inline Var concat_cols(std::span<const Var> parts) {
  detail::require(!parts.empty(), "concat_cols", "no inputs");
  Tape& t = detail::same_tape("concat_cols", parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    detail::same_tape("concat_cols", parts[0], p);
    detail::require(p.rows() == rows, "concat_cols", detail::shapes(parts[0].value(), p.value()));
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const Matrix& x = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) out(i, offset + c) = x(i, c);
    offset += x.cols();
  }
  std::vector<Var> in(parts.begin(), parts.end());
  return t.record("concat_cols", std::move(out), [in = std::move(in)](Tape& t, const Matrix& g) {
    std::size_t offset = 0;
    for (const auto& p : in) {
      Matrix& gp = t.grad_slot(p);
      for (std::size_t i = 0; i < gp.rows(); ++i)
        for (std::size_t c = 0; c < gp.cols(); ++c) gp(i, c) += g(i, offset + c);
      offset += gp.cols();
    }
  });
}

/// Leading diagonal a(i, i), i < rows, as an n x 1 column (requires cols >= rows).
inline Var diagonal(Var a) {
  Tape& t = detail::same_tape("diagonal", a);
  const Matrix& x = a.value();
  detail::require(x.cols() >= x.rows(), "diagonal", "needs cols >= rows, got " + x.shape_string());
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) out(i, 0) = x(i, i);
  return t.record("diagonal", std::move(out), [a](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < g.rows(); ++i) ga(i, i) += g(i, 0);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a (n x k) times b (k x m).
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape("matmul", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.cols() == y.rows(), "matmul", detail::shapes(x, y));
  Matrix out(x.rows(), y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xv = x(i, k);
      for (std::size_t j = 0; j < y.cols(); ++j) out(i, j) += xv * y(k, j);
    }
  return t.record("matmul", std::move(out), [a, b](Tape& t, const Matrix& g) {
    const Matrix &x = t.value(a), &y = t.value(b);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < x.cols(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) s += g(i, j) * y(k, j);
        ga(i, k) += s;
      }
    Matrix& gb = t.grad_slot(b);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t k = 0; k < x.cols(); ++k) {
        const double xv = x(i, k);
        for (std::size_t j = 0; j < y.cols(); ++j) gb(k, j) += xv * g(i, j);
      }
  });
}

/// a (n x k) times transpose(b) where b is m x k; gives n x m.
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape("matmul_nt", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.cols() == y.cols(), "matmul_nt", detail::shapes(x, y));
  Matrix out(x.rows(), y.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < y.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += x(i, k) * y(j, k);
      out(i, j) = s;
    }
  return t.record("matmul_nt", std::move(out), [a, b](Tape& t, const Matrix& g) {
    const Matrix &x = t.value(a), &y = t.value(b);
    Matrix& ga = t.grad_slot(a);
    Matrix& gb = t.grad_slot(b);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < y.rows(); ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        for (std::size_t k = 0; k < x.cols(); ++k) {
          ga(i, k) += gij * y(j, k);
          gb(j, k) += gij * x(i, k);
        }
      }
  });
}

/// Row-wise affine map: out = x * W^T + bias, with x n x k, W m x k, bias 1 x m.
inline Var affine(Var x, Var w, Var bias) {
  Tape& t = detail::same_tape("affine", x, w);
  detail::same_tape("affine", x, bias);
  const Matrix &xv = x.value(), &wv = w.value(), &bv = bias.value();
  detail::require(xv.cols() == wv.cols(), "affine", "input " + detail::shapes(xv, wv));
  detail::require(bv.rows() == 1 && bv.cols() == wv.rows(), "affine", "bias " + detail::shapes(bv, wv));
  Matrix out(xv.rows(), wv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto xi = xv.row(i);
    for (std::size_t j = 0; j < wv.rows(); ++j) {
      auto wj = wv.row(j);
      double s = bv[j];
      for (std::size_t k = 0; k < xi.size(); ++k) s += wj[k] * xi[k];
      out(i, j) = s;
    }
  }
  return t.record("affine", std::move(out), [x, w, bias](Tape& t, const Matrix& g) {
    const Matrix &xv = t.value(x), &wv = t.value(w);
    Matrix& gx = t.grad_slot(x);
    Matrix& gw = t.grad_slot(w);
    Matrix& gb = t.grad_slot(bias);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
      auto xi = xv.row(i);
      auto gxi = gx.row(i);
      for (std::size_t j = 0; j < wv.rows(); ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        gb[j] += gij;
        auto wj = wv.row(j);
        auto gwj = gw.row(j);
        for (std::size_t k = 0; k < xi.size(); ++k) {
          gxi[k] += gij * wj[k];
          gwj[k] += gij * xi[k];
        }
      }
    }
  });
}

/// Per-row dot product of equal-shape inputs; n x 1.
inline Var row_dot(Var a, Var b) {
  Tape& t = detail::same_tape("row_dot", a, b);
  const Matrix &x = a.value(), &y = b.value();
  detail::require(x.same_shape(y), "row_dot", detail::shapes(x, y));
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) s += x(i, c) * y(i, c);
    out(i, 0) = s;
  }
  return t.record("row_dot", std::move(out), [a, b](Tape& t, const Matrix& g) {
    const Matrix &x = t.value(a), &y = t.value(b);
    Matrix& ga = t.grad_slot(a);
    Matrix& gb = t.grad_slot(b);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        ga(i, c) += g(i, 0) * y(i, c);
        gb(i, c) += g(i, 0) * x(i, c);
      }
  });
}

/// Splits each intent row into |R| blocks: out(k, j*d + c) = alpha(k, j) * rel(j, c).
inline Var relation_blocks(Var alpha, Var rel) {
  Tape& t = detail::same_tape("relation_blocks", alpha, rel);
  const Matrix &av = alpha.value(), &rv = rel.value();
  detail::require(av.cols() == rv.rows(), "relation_blocks", detail::shapes(av, rv));
  const std::size_t d = rv.cols();
  Matrix out(av.rows(), av.cols() * d);
  for (std::size_t k = 0; k < av.rows(); ++k)
    for (std::size_t j = 0; j < av.cols(); ++j)
      for (std::size_t c = 0; c < d; ++c) out(k, j * d + c) = av(k, j) * rv(j, c);
  return t.record("relation_blocks", std::move(out), [alpha, rel](Tape& t, const Matrix& g) {
    const Matrix &av = t.value(alpha), &rv = t.value(rel);
    const std::size_t d = rv.cols();
    Matrix& ga = t.grad_slot(alpha);
    Matrix& gr = t.grad_slot(rel);
    for (std::size_t k = 0; k < av.rows(); ++k)
      for (std::size_t j = 0; j < av.cols(); ++j)
        for (std::size_t c = 0; c < d; ++c) {
          const double gv = g(k, j * d + c);
          ga(k, j) += gv * rv(j, c);
          gr(j, c) += gv * av(k, j);
        }
  });
}

// ---------------------------------------------------------------------------
// Normalizations

inline Var softmax_rows(Var a) {
  Tape& t = detail::same_tape("softmax_rows", a);
  const Matrix& x = a.value();
  detail::require(x.cols() > 0, "softmax_rows", "zero-width input " + x.shape_string());
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xi = x.row(i);
    const double mx = *std::max_element(xi.begin(), xi.end());
    double z = 0.0;
    for (std::size_t c = 0; c < xi.size(); ++c) z += (out(i, c) = std::exp(xi[c] - mx));
    for (std::size_t c = 0; c < xi.size(); ++c) out(i, c) /= z;
  }
  return t.record("softmax_rows", std::move(out), [a](Tape& t, const Matrix& g, const Matrix& s) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double dotv = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) dotv += g(i, c) * s(i, c);
      for (std::size_t c = 0; c < s.cols(); ++c) ga(i, c) += s(i, c) * (g(i, c) - dotv);
    }
  });
}

/// Row i divided by (||row i|| + eps). The eps guard keeps zero rows at zero.
inline Var normalize_rows(Var a, double eps = 1e-12) {
  Tape& t = detail::same_tape("normalize_rows", a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (double v : x.row(i)) sq += v * v;
    const double n = std::sqrt(sq) + eps;
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(i, c) / n;
  }
  return t.record("normalize_rows", std::move(out), [a, eps](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double sq = 0.0, gx = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        sq += x(i, c) * x(i, c);
        gx += g(i, c) * x(i, c);
      }
      const double s = std::sqrt(sq);
      const double n = s + eps;
      const double corr = s > 0.0 ? gx / (n * n * s) : 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) ga(i, c) += g(i, c) / n - corr * x(i, c);
    }
  });
}

/// log(sum_c exp(a(i, c))) per row; n x 1. With exclude_diagonal the c == i
/// term is left out of row i (requires cols >= rows and cols >= 2).
inline Var logsumexp_rows(Var a, bool exclude_diagonal = false) {
  Tape& t = detail::same_tape("logsumexp_rows", a);
  const Matrix& x = a.value();
  if (exclude_diagonal)
    detail::require(x.cols() >= x.rows() && x.cols() >= 2, "logsumexp_rows",
                    "exclude_diagonal needs cols >= rows and cols >= 2, got " + x.shape_string());
  detail::require(x.cols() > 0, "logsumexp_rows", "zero-width input");
  Matrix out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (!(exclude_diagonal && c == i)) mx = std::max(mx, x(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c)
      if (!(exclude_diagonal && c == i)) z += std::exp(x(i, c) - mx);
    out(i, 0) = mx + std::log(z);
  }
  return t.record("logsumexp_rows", std::move(out), [a, exclude_diagonal](Tape& t, const Matrix& g, const Matrix& lse) {
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < x.cols(); ++c)
        if (!(exclude_diagonal && c == i)) ga(i, c) += g(i, 0) * std::exp(x(i, c) - lse(i, 0));
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  Tape& t = detail::same_tape("sum", a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return t.record("sum", Matrix::scalar(s), [a](Tape& t, const Matrix& g) {
    for (auto& v : t.grad_slot(a).values()) v += g[0];
  });
}

inline Var mean(Var a) {
  detail::require(a.valid() && a.value().size() > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

inline Var sum_squares(Var a) {
  Tape& t = detail::same_tape("sum_squares", a);
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  return t.record("sum_squares", Matrix::scalar(s), [a](Tape& t, const Matrix& g) {
    const Matrix& x = t.value(a);
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += 2.0 * g[0] * x[i];
  });
}

// ---------------------------------------------------------------------------
// Composites

/// Cosine similarity of corresponding rows; n x 1.
inline Var cosine_rows(Var a, Var b) { return row_dot(normalize_rows(a), normalize_rows(b)); }

/// Pairwise cosine similarity between rows of a (n x d) and rows of b (m x d); n x m.
inline Var cosine_matrix(Var a, Var b) { return matmul_nt(normalize_rows(a), normalize_rows(b)); }

}  // namespace kamcl::ad
