#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

namespace detail {

// Squared-norm threshold below which squash and row_norms treat a row as
// zero (output and gradient both zero) instead of dividing by ~0.
inline constexpr double kNormGuard = 1e-30;

// C[M x N] += A[M x K] * B[K x N], all row-major. The k-middle/j-innermost
// order streams rows of B and C so the inner loop vectorizes without any
// floating-point reduction.
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, int m, int k_dim, int n) {
  for (int i = 0; i < m; ++i) {
    S* crow = c + static_cast<std::size_t>(i) * n;
    const S* arow = a + static_cast<std::size_t>(i) * k_dim;
    for (int k = 0; k < k_dim; ++k) {
      const S av = arow[k];
      const S* brow = b + static_cast<std::size_t>(k) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename S>
void transpose_raw(const S* src, S* dst, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<std::size_t>(j) * rows + i] = src[static_cast<std::size_t>(i) * cols + j];
}

struct ConvDims {
  int c_in = 0, h = 0, w = 0;
  int c_out = 0, kh = 0, kw = 0;
  int sh = 1, sw = 1;
  int ho = 0, wo = 0;
  int patch() const { return c_in * kh * kw; }
  int positions() const { return ho * wo; }
};

// cols[(c*kh+ky)*kw+kx][oy*wo+ox] = in[c][oy*sh+ky][ox*sw+kx]
template <typename S>
void im2col(const S* in, S* cols, const ConvDims& d) {
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const int p = d.positions();
  for (int c = 0; c < d.c_in; ++c) {
    const S* src = in + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        S* dst = cols + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * p;
        for (int oy = 0; oy < d.ho; ++oy) {
          const S* row = src + static_cast<std::size_t>(oy) * d.sh * d.w + ky * d.w + kx;
          for (int ox = 0; ox < d.wo; ++ox) dst[oy * d.wo + ox] = row[ox * d.sw];
        }
      }
    }
  }
}

// Scatter-add of a column-layout gradient back onto the input layout.
template <typename S>
void col2im_add(const S* cols, S* in, const ConvDims& d) {
  const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
  const int p = d.positions();
  for (int c = 0; c < d.c_in; ++c) {
    S* dst = in + static_cast<std::size_t>(c) * plane;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const S* src = cols + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * p;
        for (int oy = 0; oy < d.ho; ++oy) {
          S* row = dst + static_cast<std::size_t>(oy) * d.sh * d.w + ky * d.w + kx;
          for (int ox = 0; ox < d.wo; ++ox) row[ox * d.sw] += src[oy * d.wo + ox];
        }
      }
    }
  }
}

// squash(v) = (|v|^2 / (1 + |v|^2)) * v / |v|, one row. Returns the scale
// alpha such that out = alpha * v (0 for a guarded zero row).
template <typename S>
S squash_row(const S* v, S* out, int dim) {
  S n2 = 0;
  for (int i = 0; i < dim; ++i) n2 += v[i] * v[i];
  if (static_cast<double>(n2) < kNormGuard) {
    for (int i = 0; i < dim; ++i) out[i] = S(0);
    return S(0);
  }
  const S n = std::sqrt(n2);
  const S alpha = n / (S(1) + n2);
  for (int i = 0; i < dim; ++i) out[i] = alpha * v[i];
  return alpha;
}

template <typename S>
void require_rank2(const TensorT<S>& t, const char* op, const char* arg) {
  if (t.rank() != 2)
    throw ShapeError(std::string(op) + ": " + arg + " must be rank 2, got " + shape_str(t.shape));
}

}  // namespace detail

// Tape ops. Each function validates shapes, computes the output eagerly,
// and registers the matching vector-Jacobian product. Backward closures
// capture node ids and small descriptors only; large intermediates such as
// im2col buffers are recomputed from the saved node values.
namespace ops {

template <typename S>
using NodeOf = typename TapeT<S>::NodeId;

// Valid (no padding) 2-d cross-correlation plus per-channel bias.
// input [C_in,H,W], kernels [C_out,C_in,kH,kW], bias [C_out]
// -> [C_out, (H-kH)/sh+1, (W-kW)/sw+1]
template <typename S>
NodeOf<S> conv2d(TapeT<S>& t, NodeOf<S> input, NodeOf<S> kernels, NodeOf<S> bias, int sh, int sw) {
  const TensorT<S>& in = t.value(input);
  const TensorT<S>& k = t.value(kernels);
  const TensorT<S>& b = t.value(bias);
  if (in.rank() != 3) throw ShapeError("conv2d: input must be rank 3, got " + shape_str(in.shape));
  if (k.rank() != 4) throw ShapeError("conv2d: kernels must be rank 4, got " + shape_str(k.shape));
  if (in.dim(0) != k.dim(1))
    throw ShapeError("conv2d: input channels " + std::to_string(in.dim(0)) + " != kernel C_in " +
                     std::to_string(k.dim(1)));
  if (b.rank() != 1 || b.dim(0) != k.dim(0))
    throw ShapeError("conv2d: bias shape " + shape_str(b.shape) + " does not match C_out " +
                     std::to_string(k.dim(0)));
  if (sh < 1 || sw < 1) throw ShapeError("conv2d: strides must be >= 1");
  if (in.dim(1) < k.dim(2) || in.dim(2) < k.dim(3))
    throw ShapeError("conv2d: input " + shape_str(in.shape) + " smaller than kernel " +
                     shape_str(k.shape));

  detail::ConvDims d;
  d.c_in = in.dim(0);
  d.h = in.dim(1);
  d.w = in.dim(2);
  d.c_out = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.sh = sh;
  d.sw = sw;
  d.ho = (d.h - d.kh) / sh + 1;
  d.wo = (d.w - d.kw) / sw + 1;
  const int kk = d.patch();
  const int p = d.positions();

  std::vector<S> cols(static_cast<std::size_t>(kk) * p);
  detail::im2col(in.ptr(), cols.data(), d);

  TensorT<S> out({d.c_out, d.ho, d.wo});
  detail::gemm_nn(k.ptr(), cols.data(), out.ptr(), d.c_out, kk, p);
  for (int co = 0; co < d.c_out; ++co) {
    S* row = out.ptr() + static_cast<std::size_t>(co) * p;
    const S bv = b(co);
    for (int j = 0; j < p; ++j) row[j] += bv;
  }

  return t.record(
      "conv2d", {input, kernels, bias}, std::move(out),
      [input, kernels, bias, d, kk, p](TapeT<S>& tape, NodeOf<S> self) {
        const S* g = tape.grad(self).ptr();
        if (tape.requires_grad(bias)) {
          TensorT<S>& gb = tape.grad(bias);
          for (int co = 0; co < d.c_out; ++co) {
            const S* row = g + static_cast<std::size_t>(co) * p;
            S acc = 0;
            for (int j = 0; j < p; ++j) acc += row[j];
            gb(co) += acc;
          }
        }
        if (tape.requires_grad(kernels)) {
          // dK = dOut[C_out x P] * cols^T[P x K]; recompute the columns
          // rather than keeping a large buffer alive per node.
          std::vector<S> cols(static_cast<std::size_t>(kk) * p);
          detail::im2col(tape.value(input).ptr(), cols.data(), d);
          std::vector<S> cols_t(cols.size());
          detail::transpose_raw(cols.data(), cols_t.data(), kk, p);
          detail::gemm_nn(g, cols_t.data(), tape.grad(kernels).ptr(), d.c_out, p, kk);
        }
        if (tape.requires_grad(input)) {
          // dCols = K^T[K x C_out] * dOut[C_out x P], scattered back.
          std::vector<S> k_t(static_cast<std::size_t>(kk) * d.c_out);
          detail::transpose_raw(tape.value(kernels).ptr(), k_t.data(), d.c_out, kk);
          std::vector<S> gcols(static_cast<std::size_t>(kk) * p, S(0));
          detail::gemm_nn(k_t.data(), g, gcols.data(), kk, d.c_out, p);
          detail::col2im_add(gcols.data(), tape.grad(input).ptr(), d);
        }
      });
}

// a [M,K] * b [K,N] -> [M,N]
template <typename S>
NodeOf<S> matmul(TapeT<S>& t, NodeOf<S> a, NodeOf<S> b) {
  const TensorT<S>& av = t.value(a);
  const TensorT<S>& bv = t.value(b);
  detail::require_rank2(av, "matmul", "lhs");
  detail::require_rank2(bv, "matmul", "rhs");
  if (av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: inner dims " + shape_str(av.shape) + " x " + shape_str(bv.shape));
  const int m = av.dim(0), kk = av.dim(1), n = bv.dim(1);

  TensorT<S> out({m, n});
  detail::gemm_nn(av.ptr(), bv.ptr(), out.ptr(), m, kk, n);

  return t.record("matmul", {a, b}, std::move(out),
                  [a, b, m, kk, n](TapeT<S>& tape, NodeOf<S> self) {
                    const S* g = tape.grad(self).ptr();
                    if (tape.requires_grad(a)) {
                      // dA = dOut * B^T
                      std::vector<S> b_t(static_cast<std::size_t>(kk) * n);
                      detail::transpose_raw(tape.value(b).ptr(), b_t.data(), kk, n);
                      detail::gemm_nn(g, b_t.data(), tape.grad(a).ptr(), m, n, kk);
                    }
                    if (tape.requires_grad(b)) {
                      // dB = A^T * dOut
                      std::vector<S> a_t(static_cast<std::size_t>(m) * kk);
                      detail::transpose_raw(tape.value(a).ptr(), a_t.data(), m, kk);
                      detail::gemm_nn(a_t.data(), g, tape.grad(b).ptr(), kk, m, n);
                    }
                  });
}

// Elementwise max(0, x). Subgradient at 0 is 0.
template <typename S>
NodeOf<S> relu(TapeT<S>& t, NodeOf<S> x) {
  const TensorT<S>& xv = t.value(x);
  TensorT<S> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = xv.data[i] > S(0) ? xv.data[i] : S(0);

  return t.record("relu", {x}, std::move(out), [x](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    const TensorT<S>& xv = tape.value(x);
    TensorT<S>& gx = tape.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv.data[i] > S(0)) gx.data[i] += g.data[i];
  });
}

// Row-wise softmax of a rank-2 tensor, max-subtracted for stability.
template <typename S>
NodeOf<S> softmax_rows(TapeT<S>& t, NodeOf<S> x) {
  const TensorT<S>& xv = t.value(x);
  detail::require_rank2(xv, "softmax_rows", "input");
  const int r = xv.dim(0), c = xv.dim(1);

  TensorT<S> out(xv.shape);
  for (int i = 0; i < r; ++i) {
    const S* row = xv.ptr() + static_cast<std::size_t>(i) * c;
    S* orow = out.ptr() + static_cast<std::size_t>(i) * c;
    S mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    S denom = 0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= denom;
  }

  return t.record("softmax_rows", {x}, std::move(out), [x, r, c](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& y = tape.value(self);
    const TensorT<S>& g = tape.grad(self);
    TensorT<S>& gx = tape.grad(x);
    for (int i = 0; i < r; ++i) {
      const S* yrow = y.ptr() + static_cast<std::size_t>(i) * c;
      const S* grow = g.ptr() + static_cast<std::size_t>(i) * c;
      S* gxrow = gx.ptr() + static_cast<std::size_t>(i) * c;
      S dot = 0;
      for (int j = 0; j < c; ++j) dot += grow[j] * yrow[j];
      for (int j = 0; j < c; ++j) gxrow[j] += yrow[j] * (grow[j] - dot);
    }
  });
}

// Row-wise squash of a rank-2 tensor [R,D]:
//   squash(v) = (|v|^2 / (1 + |v|^2)) * v / |v|
// Rows with |v|^2 below the guard map to zero with zero gradient.
template <typename S>
NodeOf<S> squash_rows(TapeT<S>& t, NodeOf<S> v) {
  const TensorT<S>& vv = t.value(v);
  detail::require_rank2(vv, "squash_rows", "input");
  const int r = vv.dim(0), dim = vv.dim(1);

  TensorT<S> out(vv.shape);
  for (int i = 0; i < r; ++i)
    detail::squash_row(vv.ptr() + static_cast<std::size_t>(i) * dim,
                       out.ptr() + static_cast<std::size_t>(i) * dim, dim);

  return t.record("squash_rows", {v}, std::move(out), [v, r, dim](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& vv = tape.value(v);
    const TensorT<S>& g = tape.grad(self);
    TensorT<S>& gv = tape.grad(v);
    for (int i = 0; i < r; ++i) {
      const S* vrow = vv.ptr() + static_cast<std::size_t>(i) * dim;
      const S* grow = g.ptr() + static_cast<std::size_t>(i) * dim;
      S* gvrow = gv.ptr() + static_cast<std::size_t>(i) * dim;
      S n2 = 0;
      for (int j = 0; j < dim; ++j) n2 += vrow[j] * vrow[j];
      if (static_cast<double>(n2) < detail::kNormGuard) continue;
      const S n = std::sqrt(n2);
      const S alpha = n / (S(1) + n2);
      // d alpha / d n, then chain through n = |v|:
      //   dOut_i/dV_j = alpha * I_ij + (alpha' / n) * v_i * v_j
      const S dalpha = (S(1) - n2) / ((S(1) + n2) * (S(1) + n2));
      S dot = 0;
      for (int j = 0; j < dim; ++j) dot += grow[j] * vrow[j];
      const S coef = dalpha / n * dot;
      for (int j = 0; j < dim; ++j) gvrow[j] += alpha * grow[j] + coef * vrow[j];
    }
  });
}

// View with a new shape; element count must match.
template <typename S>
NodeOf<S> reshape(TapeT<S>& t, NodeOf<S> x, Shape shape) {
  const TensorT<S>& xv = t.value(x);
  if (shape_numel(shape) != xv.size())
    throw ShapeError("reshape: cannot view " + shape_str(xv.shape) + " as " + shape_str(shape));

  TensorT<S> out(std::move(shape), xv.data);
  return t.record("reshape", {x}, std::move(out), [x](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    TensorT<S>& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
  });
}

// [R,C] -> [C,R]
template <typename S>
NodeOf<S> transpose2d(TapeT<S>& t, NodeOf<S> x) {
  const TensorT<S>& xv = t.value(x);
  detail::require_rank2(xv, "transpose2d", "input");
  const int r = xv.dim(0), c = xv.dim(1);

  TensorT<S> out({c, r});
  detail::transpose_raw(xv.ptr(), out.ptr(), r, c);

  return t.record("transpose2d", {x}, std::move(out), [x, r, c](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    TensorT<S>& gx = tape.grad(x);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) gx(i, j) += g(j, i);
  });
}

// Stack rank-2 tensors with equal column counts along rows.
template <typename S>
NodeOf<S> concat_rows(TapeT<S>& t, const std::vector<NodeOf<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int c = [&] {
    const TensorT<S>& first = t.value(parts[0]);
    detail::require_rank2(first, "concat_rows", "input");
    return first.dim(1);
  }();
  int rows = 0;
  for (const NodeOf<S> p : parts) {
    const TensorT<S>& pv = t.value(p);
    detail::require_rank2(pv, "concat_rows", "input");
    if (pv.dim(1) != c)
      throw ShapeError("concat_rows: column mismatch " + shape_str(pv.shape) + " vs " +
                       std::to_string(c) + " columns");
    rows += pv.dim(0);
  }

  TensorT<S> out({rows, c});
  std::size_t off = 0;
  for (const NodeOf<S> p : parts) {
    const TensorT<S>& pv = t.value(p);
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += pv.size();
  }

  return t.record("concat_rows", parts, std::move(out),
                  [parts](TapeT<S>& tape, NodeOf<S> self) {
                    const TensorT<S>& g = tape.grad(self);
                    std::size_t off = 0;
                    for (const NodeOf<S> p : parts) {
                      const std::size_t n = tape.value(p).size();
                      if (tape.requires_grad(p)) {
                        TensorT<S>& gp = tape.grad(p);
                        for (std::size_t i = 0; i < n; ++i) gp.data[i] += g.data[off + i];
                      }
                      off += n;
                    }
                  });
}

// Slice index i of the leading dimension: [D0, rest...] -> [rest...].
template <typename S>
NodeOf<S> select0(TapeT<S>& t, NodeOf<S> x, int index) {
  const TensorT<S>& xv = t.value(x);
  if (xv.rank() < 2) throw ShapeError("select0: input must have rank >= 2");
  if (index < 0 || index >= xv.dim(0))
    throw ShapeError("select0: index " + std::to_string(index) + " out of range for " +
                     shape_str(xv.shape));

  Shape rest(xv.shape.begin() + 1, xv.shape.end());
  const std::size_t stride = shape_numel(rest);
  const std::size_t off = static_cast<std::size_t>(index) * stride;

  TensorT<S> out(rest);
  std::copy(xv.data.begin() + static_cast<std::ptrdiff_t>(off),
            xv.data.begin() + static_cast<std::ptrdiff_t>(off + stride), out.data.begin());

  return t.record("select0", {x}, std::move(out),
                  [x, off, stride](TapeT<S>& tape, NodeOf<S> self) {
                    const TensorT<S>& g = tape.grad(self);
                    TensorT<S>& gx = tape.grad(x);
                    for (std::size_t i = 0; i < stride; ++i) gx.data[off + i] += g.data[i];
                  });
}

template <typename S>
NodeOf<S> add(TapeT<S>& t, NodeOf<S> a, NodeOf<S> b) {
  const TensorT<S>& av = t.value(a);
  const TensorT<S>& bv = t.value(b);
  if (!av.same_shape(bv))
    throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));

  TensorT<S> out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] + bv.data[i];

  return t.record("add", {a, b}, std::move(out), [a, b](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    if (tape.requires_grad(a)) {
      TensorT<S>& ga = tape.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (tape.requires_grad(b)) {
      TensorT<S>& gb = tape.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i];
    }
  });
}

// a + alpha * b
template <typename S>
NodeOf<S> add_scaled(TapeT<S>& t, NodeOf<S> a, NodeOf<S> b, S alpha) {
  const TensorT<S>& av = t.value(a);
  const TensorT<S>& bv = t.value(b);
  if (!av.same_shape(bv))
    throw ShapeError("add_scaled: shape mismatch " + shape_str(av.shape) + " vs " +
                     shape_str(bv.shape));

  TensorT<S> out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = av.data[i] + alpha * bv.data[i];

  return t.record("add_scaled", {a, b}, std::move(out),
                  [a, b, alpha](TapeT<S>& tape, NodeOf<S> self) {
                    const TensorT<S>& g = tape.grad(self);
                    if (tape.requires_grad(a)) {
                      TensorT<S>& ga = tape.grad(a);
                      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
                    }
                    if (tape.requires_grad(b)) {
                      TensorT<S>& gb = tape.grad(b);
                      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += alpha * g.data[i];
                    }
                  });
}

template <typename S>
NodeOf<S> scale(TapeT<S>& t, NodeOf<S> x, S c) {
  const TensorT<S>& xv = t.value(x);
  TensorT<S> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = c * xv.data[i];

  return t.record("scale", {x}, std::move(out), [x, c](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    TensorT<S>& gx = tape.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += c * g.data[i];
  });
}

// Elementwise sum of same-shaped tensors (used to pool per-sample losses).
template <typename S>
NodeOf<S> add_n(TapeT<S>& t, const std::vector<NodeOf<S>>& parts) {
  if (parts.empty()) throw ShapeError("add_n: no inputs");
  const TensorT<S>& first = t.value(parts[0]);
  TensorT<S> out = TensorT<S>::zeros(first.shape);
  for (const NodeOf<S> p : parts) {
    const TensorT<S>& pv = t.value(p);
    if (!pv.same_shape(first))
      throw ShapeError("add_n: shape mismatch " + shape_str(pv.shape) + " vs " +
                       shape_str(first.shape));
    for (std::size_t i = 0; i < pv.size(); ++i) out.data[i] += pv.data[i];
  }

  return t.record("add_n", parts, std::move(out), [parts](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& g = tape.grad(self);
    for (const NodeOf<S> p : parts) {
      if (!tape.requires_grad(p)) continue;
      TensorT<S>& gp = tape.grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) gp.data[i] += g.data[i];
    }
  });
}

// Sum of all elements -> scalar [1].
template <typename S>
NodeOf<S> sum_all(TapeT<S>& t, NodeOf<S> x) {
  const TensorT<S>& xv = t.value(x);
  S acc = 0;
  for (const S v : xv.data) acc += v;

  return t.record("sum_all", {x}, TensorT<S>::scalar(acc), [x](TapeT<S>& tape, NodeOf<S> self) {
    const S g = tape.grad(self)(0);
    TensorT<S>& gx = tape.grad(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += g;
  });
}

// Euclidean norm of each row: [R,D] -> [R]. Guarded rows get norm 0 and a
// zero gradient.
template <typename S>
NodeOf<S> row_norms(TapeT<S>& t, NodeOf<S> v) {
  const TensorT<S>& vv = t.value(v);
  detail::require_rank2(vv, "row_norms", "input");
  const int r = vv.dim(0), dim = vv.dim(1);

  TensorT<S> out({r});
  for (int i = 0; i < r; ++i) {
    const S* row = vv.ptr() + static_cast<std::size_t>(i) * dim;
    S n2 = 0;
    for (int j = 0; j < dim; ++j) n2 += row[j] * row[j];
    out(i) = static_cast<double>(n2) < detail::kNormGuard ? S(0) : std::sqrt(n2);
  }

  return t.record("row_norms", {v}, std::move(out), [v, r, dim](TapeT<S>& tape, NodeOf<S> self) {
    const TensorT<S>& norms = tape.value(self);
    const TensorT<S>& g = tape.grad(self);
    const TensorT<S>& vv = tape.value(v);
    TensorT<S>& gv = tape.grad(v);
    for (int i = 0; i < r; ++i) {
      if (norms(i) == S(0)) continue;
      const S coef = g(i) / norms(i);
      const S* vrow = vv.ptr() + static_cast<std::size_t>(i) * dim;
      S* gvrow = gv.ptr() + static_cast<std::size_t>(i) * dim;
      for (int j = 0; j < dim; ++j) gvrow[j] += coef * vrow[j];
    }
  });
}

}  // namespace ops
}  // namespace arcnet
