// Copyright (c) 2026 the dprnn authors
// Licensed under the Apache License 2.0.

/**
 * Differentiable operations over Tensor. Every op computes its value
 * eagerly; when a tape is supplied and any input requires gradients, the
 * op records a reverse step that adds its vector-Jacobian product into
 * the adjoint buffers. Pass tape == nullptr for plain inference.
 *
 * Norm denominators carry an epsilon of 1e-8 so zero vectors stay finite
 * and differentiable everywhere.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dprnn/error.hpp"
#include "dprnn/tensor.hpp"

namespace dprnn {

/// Added to every norm product before dividing.
inline constexpr double kNormEps = 1e-8;

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": operand shapes disagree: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline bool taped(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (tape == nullptr) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

inline void mark(Tensor& out) { out.node()->requires_grad = true; }

inline double stable_sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double row_norm(const std::vector<double>& v, std::size_t row,
                       std::size_t width) {
  double s = 0.0;
  const std::size_t base = row * width;
  for (std::size_t t = 0; t < width; ++t) s += v[base + t] * v[base + t];
  return std::sqrt(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise ops (equal shapes; no broadcasting)
// ---------------------------------------------------------------------------

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);
        for (std::size_t i = 0; i < g->size(); ++i) gbuf[i] += (*g)[i];
      }
    });
  }
  return r;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);
        for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);
        for (std::size_t i = 0; i < g->size(); ++i) gbuf[i] -= (*g)[i];
      }
    });
  }
  return r;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);
        for (std::size_t i = 0; i < g->size(); ++i)
          ga[i] += (*g)[i] * bn->values[i];
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);
        for (std::size_t i = 0; i < g->size(); ++i)
          gbuf[i] += (*g)[i] * an->values[i];
      }
    });
  }
  return r;
}

/// Multiply every element by a constant.
inline Tensor scale(Tape* tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * c;
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i] * c;
    });
  }
  return r;
}

/// Add the same constant to every element.
inline Tensor add_scalar(Tape* tape, const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + c;
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < g->size(); ++i) ga[i] += (*g)[i];
    });
  }
  return r;
}

inline Tensor sigmoid(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = detail::stable_sigmoid(a.at(i));
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = rn->values[i];
        ga[i] += (*g)[i] * y * (1.0 - y);
      }
    });
  }
  return r;
}

inline Tensor tanh(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.at(i));
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < g->size(); ++i) {
        const double y = rn->values[i];
        ga[i] += (*g)[i] * (1.0 - y * y);
      }
    });
  }
  return r;
}

/// max(x, 0). The backward step passes gradient only where the input is
/// strictly positive (subgradient 0 at the kink and below).
inline Tensor relu(Tape* tape, const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.at(i) > 0.0 ? a.at(i) : 0.0;
  Tensor r(a.shape(), std::move(out));
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < g->size(); ++i) {
        if (an->values[i] > 0.0) ga[i] += (*g)[i];
      }
    });
  }
  return r;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  std::vector<double> out(m * q, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < p; ++t) {
      const double av = a.at(i, t);
      for (std::size_t j = 0; j < q; ++j) out[i * q + j] += av * b.at(t, j);
    }
  }
  Tensor r(Shape{m, q}, std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn, m, p, q](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);  // ga += g * b^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < q; ++j) {
            const double gv = (*g)[i * q + j];
            for (std::size_t t = 0; t < p; ++t)
              ga[i * p + t] += gv * bn->values[t * q + j];
          }
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);  // gb += a^T * g
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < p; ++t) {
            const double av = an->values[i * p + t];
            for (std::size_t j = 0; j < q; ++j)
              gbuf[t * q + j] += av * (*g)[i * q + j];
          }
      }
    });
  }
  return r;
}

/// a (r x h) times b^T (h x s) without materializing the transpose.
inline Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: shared dimension disagrees: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), h = a.cols(), s = b.rows();
  std::vector<double> out(r * s, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < h; ++t) acc += a.at(i, t) * b.at(j, t);
      out[i * s + j] = acc;
    }
  Tensor res(Shape{r, s}, std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(res);
    auto an = a.node(), bn = b.node(), rn = res.node();
    tape->record([an, bn, rn, r, h, s](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);  // ga += g * b
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < s; ++j) {
            const double gv = (*g)[i * s + j];
            for (std::size_t t = 0; t < h; ++t)
              ga[i * h + t] += gv * bn->values[j * h + t];
          }
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);  // gb += g^T * a
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < s; ++j) {
            const double gv = (*g)[i * s + j];
            for (std::size_t t = 0; t < h; ++t)
              gbuf[j * h + t] += gv * an->values[i * h + t];
          }
      }
    });
  }
  return res;
}

/// Matrix times rank-1 vector (v may also be a 1 x n row).
inline Tensor matvec(Tape* tape, const Tensor& a, const Tensor& v) {
  if (a.rank() != 2 || v.size() != a.cols()) {
    throw DimensionError("matvec: " + shape_str(a.shape()) + " * " +
                         shape_str(v.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a.at(i, j) * v.at(j);
    out[i] = acc;
  }
  Tensor r(Shape{m}, std::move(out));
  if (detail::taped(tape, {&a, &v})) {
    detail::mark(r);
    auto an = a.node(), vn = v.node(), rn = r.node();
    tape->record([an, vn, rn, m, n](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (an->requires_grad) {
        auto& ga = gb.get(an);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            ga[i * n + j] += (*g)[i] * vn->values[j];
      }
      if (vn->requires_grad) {
        auto& gv = gb.get(vn);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gv[j] += (*g)[i] * an->values[i * n + j];
      }
    });
  }
  return r;
}

/// Inner product of two equal-length tensors, flattened.
inline Tensor dot(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: sizes disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i) * b.at(i);
  Tensor r = Tensor::scalar(acc);
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      const double gv = (*g)[0];
      if (an->requires_grad) {
        auto& ga = gb.get(an);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv * bn->values[i];
      }
      if (bn->requires_grad) {
        auto& gbuf = gb.get(bn);
        for (std::size_t i = 0; i < gbuf.size(); ++i)
          gbuf[i] += gv * an->values[i];
      }
    });
  }
  return r;
}

inline Tensor sum_all(Tape* tape, const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.at(i);
  Tensor r = Tensor::scalar(acc);
  if (detail::taped(tape, {&a})) {
    detail::mark(r);
    auto an = a.node(), rn = r.node();
    tape->record([an, rn](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      const double gv = (*g)[0];
      auto& ga = gb.get(an);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gv;
    });
  }
  return r;
}

/// Add a length-c vector to every row of an (r x c) matrix.
inline Tensor add_rowvec(Tape* tape, const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.size() != m.cols()) {
    throw DimensionError("add_rowvec: " + shape_str(m.shape()) + " + " +
                         shape_str(v.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) + v.at(j);
  Tensor res(Shape{r, c}, std::move(out));
  if (detail::taped(tape, {&m, &v})) {
    detail::mark(res);
    auto mn = m.node(), vn = v.node(), rn = res.node();
    tape->record([mn, vn, rn, r, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (mn->requires_grad) {
        auto& gm = gb.get(mn);
        for (std::size_t i = 0; i < g->size(); ++i) gm[i] += (*g)[i];
      }
      if (vn->requires_grad) {
        auto& gv = gb.get(vn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gv[j] += (*g)[i * c + j];
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Row assembly and indexing
// ---------------------------------------------------------------------------

/// Select table rows by index. Repeated indices accumulate gradient.
inline Tensor gather_rows(Tape* tape, const Tensor& table,
                          const std::vector<std::size_t>& ids) {
  if (table.rank() != 2) {
    throw DimensionError("gather_rows: table must be rank 2, got " +
                         shape_str(table.shape()));
  }
  const std::size_t c = table.cols();
  for (std::size_t id : ids) {
    if (id >= table.rows()) {
      throw ValidationError("gather_rows: index " + std::to_string(id) +
                            " out of range for " + shape_str(table.shape()));
    }
  }
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = table.at(ids[i], j);
  Tensor r(Shape{ids.size(), c}, std::move(out));
  if (detail::taped(tape, {&table})) {
    detail::mark(r);
    auto tn = table.node(), rn = r.node();
    tape->record([tn, rn, ids, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& gt = gb.get(tn);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < c; ++j)
          gt[ids[i] * c + j] += (*g)[i * c + j];
    });
  }
  return r;
}

/// Stack equal-width tensors (each of total size w) as matrix rows.
inline Tensor concat_rows(Tape* tape, const std::vector<Tensor>& rows) {
  if (rows.empty()) {
    throw ValidationError("concat_rows: no rows");
  }
  const std::size_t w = rows.front().size();
  for (const Tensor& t : rows) {
    if (t.size() != w) {
      throw DimensionError("concat_rows: inconsistent row widths");
    }
  }
  std::vector<double> out(rows.size() * w);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = rows[i].at(j);
  Tensor r(Shape{rows.size(), w}, std::move(out));
  bool any = false;
  for (const Tensor& t : rows) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    detail::mark(r);
    std::vector<std::shared_ptr<TensorData>> nodes;
    nodes.reserve(rows.size());
    for (const Tensor& t : rows) nodes.push_back(t.node());
    auto rn = r.node();
    tape->record([nodes, rn, w](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        auto& gi = gb.get(nodes[i]);
        for (std::size_t j = 0; j < w; ++j) gi[j] += (*g)[i * w + j];
      }
    });
  }
  return r;
}

/// Row r of the output is row perm[r] of the input. The permutation is a
/// constant with respect to differentiation.
inline Tensor permute_rows(Tape* tape, const Tensor& m,
                           const std::vector<std::size_t>& perm) {
  if (m.rank() != 2 || perm.size() != m.rows()) {
    throw DimensionError("permute_rows: permutation length " +
                         std::to_string(perm.size()) + " vs " +
                         shape_str(m.shape()));
  }
  const std::size_t c = m.cols();
  std::vector<double> out(m.size());
  for (std::size_t r = 0; r < perm.size(); ++r) {
    if (perm[r] >= m.rows()) {
      throw ValidationError("permute_rows: index out of range");
    }
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] = m.at(perm[r], j);
  }
  Tensor res(m.shape(), std::move(out));
  if (detail::taped(tape, {&m})) {
    detail::mark(res);
    auto mn = m.node(), rn = res.node();
    tape->record([mn, rn, perm, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& gm = gb.get(mn);
      for (std::size_t r = 0; r < perm.size(); ++r)
        for (std::size_t j = 0; j < c; ++j)
          gm[perm[r] * c + j] += (*g)[r * c + j];
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

namespace detail {

/// One softmax row with inverse temperature and optional exclusion mask.
/// Writes exp(lambda*(x - max)) / Z for kept entries, exact 0 for masked.
inline void softmax_row(const double* x, double* y, std::size_t n,
                        double lambda, const std::uint8_t* masked) {
  double mx = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (masked && masked[i]) continue;
    const double v = lambda * x[i];
    if (!any || v > mx) mx = v;
    any = true;
  }
  if (!any) {
    throw EmptySupportError("softmax: every entry is masked");
  }
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (masked && masked[i]) {
      y[i] = 0.0;
    } else {
      y[i] = std::exp(lambda * x[i] - mx);
      z += y[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

/// Adjoint of softmax_row: gx += lambda * y * (gy - <gy, y>).
inline void softmax_row_backward(const double* y, const double* gy, double* gx,
                                 std::size_t n, double lambda,
                                 const std::uint8_t* masked) {
  double inner = 0.0;
  for (std::size_t i = 0; i < n; ++i) inner += gy[i] * y[i];
  for (std::size_t i = 0; i < n; ++i) {
    if (masked && masked[i]) continue;
    gx[i] += lambda * y[i] * (gy[i] - inner);
  }
}

}  // namespace detail

/// Softmax over a flat tensor with inverse temperature `lambda`; entries
/// with a nonzero mask byte are excluded and come out exactly 0. The
/// output sums to 1 over the kept support; lambda = 0 gives the uniform
/// distribution over kept entries.
inline Tensor softmax(Tape* tape, const Tensor& x, double lambda,
                      const std::vector<std::uint8_t>* masked = nullptr) {
  const std::size_t n = x.size();
  if (masked && masked->size() != n) {
    throw DimensionError("softmax: mask length " +
                         std::to_string(masked->size()) + " vs input " +
                         std::to_string(n));
  }
  std::vector<double> out(n);
  detail::softmax_row(x.values().data(), out.data(), n, lambda,
                      masked ? masked->data() : nullptr);
  Tensor r(x.shape(), std::move(out));
  if (detail::taped(tape, {&x})) {
    detail::mark(r);
    auto xn = x.node(), rn = r.node();
    std::vector<std::uint8_t> mask_copy =
        masked ? *masked : std::vector<std::uint8_t>();
    tape->record([xn, rn, lambda, mask_copy, n](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& gx = gb.get(xn);
      detail::softmax_row_backward(rn->values.data(), g->data(), gx.data(), n,
                                   lambda,
                                   mask_copy.empty() ? nullptr : mask_copy.data());
    });
  }
  return r;
}

/// Row-wise softmax of a matrix; one shared column mask for all rows
/// (used to exclude padded positions).
inline Tensor row_softmax(Tape* tape, const Tensor& m, double lambda,
                          const std::vector<std::uint8_t>* masked = nullptr) {
  if (m.rank() != 2) {
    throw DimensionError("row_softmax: need rank 2, got " +
                         shape_str(m.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  if (masked && masked->size() != c) {
    throw DimensionError("row_softmax: mask length vs column count");
  }
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    detail::softmax_row(m.values().data() + i * c, out.data() + i * c, c,
                        lambda, masked ? masked->data() : nullptr);
  }
  Tensor res(m.shape(), std::move(out));
  if (detail::taped(tape, {&m})) {
    detail::mark(res);
    auto mn = m.node(), rn = res.node();
    std::vector<std::uint8_t> mask_copy =
        masked ? *masked : std::vector<std::uint8_t>();
    tape->record([mn, rn, lambda, mask_copy, r, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& gm = gb.get(mn);
      const std::uint8_t* mp = mask_copy.empty() ? nullptr : mask_copy.data();
      for (std::size_t i = 0; i < r; ++i) {
        detail::softmax_row_backward(rn->values.data() + i * c,
                                     g->data() + i * c, gm.data() + i * c, c,
                                     lambda, mp);
      }
    });
  }
  return res;
}

/// Scale column j of m by v[j].
inline Tensor scale_columns(Tape* tape, const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.size() != m.cols()) {
    throw DimensionError("scale_columns: " + shape_str(m.shape()) + " vs " +
                         shape_str(v.shape()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) * v.at(j);
  Tensor res(m.shape(), std::move(out));
  if (detail::taped(tape, {&m, &v})) {
    detail::mark(res);
    auto mn = m.node(), vn = v.node(), rn = res.node();
    tape->record([mn, vn, rn, r, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      if (mn->requires_grad) {
        auto& gm = gb.get(mn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gm[i * c + j] += (*g)[i * c + j] * vn->values[j];
      }
      if (vn->requires_grad) {
        auto& gv = gb.get(vn);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gv[j] += (*g)[i * c + j] * mn->values[i * c + j];
      }
    });
  }
  return res;
}

/// Divide each column by sqrt(sum of its squares + eps^2). With the
/// epsilon under the root an all-zero column stays zero and the map is
/// differentiable everywhere.
inline Tensor l2_normalize_columns(Tape* tape, const Tensor& m,
                                   double eps = kNormEps) {
  if (m.rank() != 2) {
    throw DimensionError("l2_normalize_columns: need rank 2");
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> denom(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r; ++i) s += m.at(i, j) * m.at(i, j);
    denom[j] = std::sqrt(s + eps * eps);
  }
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.at(i, j) / denom[j];
  Tensor res(m.shape(), std::move(out));
  if (detail::taped(tape, {&m})) {
    detail::mark(res);
    auto mn = m.node(), rn = res.node();
    tape->record([mn, rn, denom, r, c](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      auto& gm = gb.get(mn);
      for (std::size_t j = 0; j < c; ++j) {
        double inner = 0.0;  // <g_col, x_col>
        for (std::size_t i = 0; i < r; ++i)
          inner += (*g)[i * c + j] * mn->values[i * c + j];
        const double d = denom[j];
        const double d3 = d * d * d;
        for (std::size_t i = 0; i < r; ++i) {
          gm[i * c + j] +=
              (*g)[i * c + j] / d - inner * mn->values[i * c + j] / d3;
        }
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cosine similarity family
// ---------------------------------------------------------------------------

namespace detail {

/// d cos(a,b) / da contribution for one row pair, shared by the three
/// cosine ops. D = |a||b| + eps; dc/da = b/D - c * |b| * a / (|a| * D).
inline void cosine_backward_row(const double* a, const double* b, double na,
                                double nb, double c, double g, std::size_t h,
                                double* ga, double* gbuf) {
  const double d = na * nb + kNormEps;
  if (ga) {
    const double k = na > 0.0 ? c * nb / (d * na) : 0.0;
    for (std::size_t t = 0; t < h; ++t) ga[t] += g * (b[t] / d - k * a[t]);
  }
  if (gbuf) {
    const double k = nb > 0.0 ? c * na / (d * nb) : 0.0;
    for (std::size_t t = 0; t < h; ++t) gbuf[t] += g * (a[t] / d - k * b[t]);
  }
}

}  // namespace detail

/// cos(a, b) = <a,b> / (|a||b| + eps). Zero vectors give 0.
inline Tensor cosine(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: sizes disagree: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const std::size_t h = a.size();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t t = 0; t < h; ++t) {
    sab += a.at(t) * b.at(t);
    saa += a.at(t) * a.at(t);
    sbb += b.at(t) * b.at(t);
  }
  const double na = std::sqrt(saa), nb = std::sqrt(sbb);
  const double c = sab / (na * nb + kNormEps);
  Tensor r = Tensor::scalar(c);
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(r);
    auto an = a.node(), bn = b.node(), rn = r.node();
    tape->record([an, bn, rn, na, nb, c, h](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      double* ga = an->requires_grad ? gb.get(an).data() : nullptr;
      double* gbuf = bn->requires_grad ? gb.get(bn).data() : nullptr;
      detail::cosine_backward_row(an->values.data(), bn->values.data(), na, nb,
                                  c, (*g)[0], h, ga, gbuf);
    });
  }
  return r;
}

/// Per-row cosine of two (r x h) matrices: out[i] = cos(a_i, b_i).
inline Tensor cosine_rows(Tape* tape, const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "cosine_rows");
  if (a.rank() != 2) {
    throw DimensionError("cosine_rows: need rank 2");
  }
  const std::size_t r = a.rows(), h = a.cols();
  std::vector<double> na(r), nb(r), out(r);
  for (std::size_t i = 0; i < r; ++i) {
    na[i] = detail::row_norm(a.values(), i, h);
    nb[i] = detail::row_norm(b.values(), i, h);
    double s = 0.0;
    for (std::size_t t = 0; t < h; ++t) s += a.at(i, t) * b.at(i, t);
    out[i] = s / (na[i] * nb[i] + kNormEps);
  }
  Tensor res(Shape{r}, std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(res);
    auto an = a.node(), bn = b.node(), rn = res.node();
    tape->record([an, bn, rn, na, nb, r, h](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      double* ga = an->requires_grad ? gb.get(an).data() : nullptr;
      double* gbuf = bn->requires_grad ? gb.get(bn).data() : nullptr;
      for (std::size_t i = 0; i < r; ++i) {
        detail::cosine_backward_row(
            an->values.data() + i * h, bn->values.data() + i * h, na[i], nb[i],
            rn->values[i], (*g)[i], h, ga ? ga + i * h : nullptr,
            gbuf ? gbuf + i * h : nullptr);
      }
    });
  }
  return res;
}

/// All-pairs cosine of the rows of a (r x h) and b (s x h): out[i][j] =
/// cos(a_i, b_j).
inline Tensor cosine_matrix(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("cosine_matrix: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), s = b.rows(), h = a.cols();
  std::vector<double> na(r), nb(s), out(r * s);
  for (std::size_t i = 0; i < r; ++i) na[i] = detail::row_norm(a.values(), i, h);
  for (std::size_t j = 0; j < s; ++j) nb[j] = detail::row_norm(b.values(), j, h);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < h; ++t) acc += a.at(i, t) * b.at(j, t);
      out[i * s + j] = acc / (na[i] * nb[j] + kNormEps);
    }
  Tensor res(Shape{r, s}, std::move(out));
  if (detail::taped(tape, {&a, &b})) {
    detail::mark(res);
    auto an = a.node(), bn = b.node(), rn = res.node();
    tape->record([an, bn, rn, na, nb, r, s, h](GradBuffers& gb) {
      auto* g = gb.find(rn.get());
      if (!g) return;
      double* ga = an->requires_grad ? gb.get(an).data() : nullptr;
      double* gbuf = bn->requires_grad ? gb.get(bn).data() : nullptr;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < s; ++j) {
          const double gv = (*g)[i * s + j];
          if (gv == 0.0) continue;
          detail::cosine_backward_row(
              an->values.data() + i * h, bn->values.data() + j * h, na[i],
              nb[j], rn->values[i * s + j], gv, h, ga ? ga + i * h : nullptr,
              gbuf ? gbuf + j * h : nullptr);
        }
    });
  }
  return res;
}

}  // namespace dprnn
