#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/ops.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

// One routed capsule layer on top of the primary capsules.
//
// w holds a separate transform per (parent, class) pair. b is the learnable
// prior over couplings: it starts at zero, each forward pass routes on a
// per-sample working copy (the copy receives the agreement increments), and
// the persistent parameter itself only changes through gradient descent.
template <typename S>
struct CapsuleParamsT {
  TensorT<S> w;  // [N_in, N_out, D_in, D_out]
  TensorT<S> b;  // [N_in, N_out] prior logits
  int r = 3;     // routing iterations
  S eta = S(0.1);  // soft-update coefficient

  static CapsuleParamsT init(int n_in, int n_out, int d_in, int d_out, int r, S eta, Rng& rng) {
    if (r < 1) throw ConfigError("capsule layer: r must be >= 1");
    if (!(eta > S(0))) throw ConfigError("capsule layer: eta must be positive");
    CapsuleParamsT p;
    const double bound = std::sqrt(1.0 / d_in);
    p.w = TensorT<S>({n_in, n_out, d_in, d_out});
    for (auto& v : p.w.data) v = static_cast<S>(rng.uniform(-bound, bound));
    p.b = TensorT<S>::zeros({n_in, n_out});
    p.r = r;
    p.eta = eta;
    return p;
  }
};

using CapsuleParams = CapsuleParamsT<float>;

template <typename S>
struct CapsuleNodesT {
  using NodeId = typename TapeT<S>::NodeId;
  NodeId w, b;

  static CapsuleNodesT leaves(TapeT<S>& t, const CapsuleParamsT<S>& p) {
    return {t.leaf(p.w, true), t.leaf(p.b, true)};
  }
};

// Value-level record of one routing run (no gradients, diagnostics only).
template <typename S>
struct RoutingTraceT {
  TensorT<S> coupling;                  // final accumulated c, rows sum to 1 + r*eta
  std::vector<TensorT<S>> increments;   // agreement increment per iteration
  TensorT<S> v;                         // output capsules [N_out, D_out]
};

using RoutingTrace = RoutingTraceT<float>;

namespace ops {

// Per-pair prediction vectors: u_hat[i][j] = U[i] * W[i][j].
// U [N_in, D_in], W [N_in, N_out, D_in, D_out] -> [N_in, N_out, D_out]
template <typename S>
NodeOf<S> caps_transform(TapeT<S>& t, NodeOf<S> u, NodeOf<S> w) {
  const TensorT<S>& uv = t.value(u);
  const TensorT<S>& wv = t.value(w);
  if (uv.rank() != 2 || wv.rank() != 4 || uv.dim(0) != wv.dim(0) || uv.dim(1) != wv.dim(2))
    throw ShapeError("caps_transform: U " + shape_str(uv.shape) + " vs W " + shape_str(wv.shape));
  const int n_in = uv.dim(0), n_out = wv.dim(1), d_in = uv.dim(1), d_out = wv.dim(3);

  TensorT<S> out({n_in, n_out, d_out});
  for (int i = 0; i < n_in; ++i)
    for (int j = 0; j < n_out; ++j) {
      const S* urow = uv.ptr() + static_cast<std::size_t>(i) * d_in;
      const S* wmat = wv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_in * d_out;
      S* orow = out.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
      for (int k = 0; k < d_in; ++k) {
        const S uk = urow[k];
        const S* wrow = wmat + static_cast<std::size_t>(k) * d_out;
        for (int d = 0; d < d_out; ++d) orow[d] += uk * wrow[d];
      }
    }

  return t.record(
      "caps_transform", {u, w}, std::move(out),
      [u, w, n_in, n_out, d_in, d_out](TapeT<S>& tape, NodeOf<S> self) {
        const TensorT<S>& g = tape.grad(self);
        const TensorT<S>& uv = tape.value(u);
        const TensorT<S>& wv = tape.value(w);
        const bool need_u = tape.requires_grad(u);
        const bool need_w = tape.requires_grad(w);
        for (int i = 0; i < n_in; ++i)
          for (int j = 0; j < n_out; ++j) {
            const S* grow = g.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
            const S* urow = uv.ptr() + static_cast<std::size_t>(i) * d_in;
            const S* wmat = wv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_in * d_out;
            if (need_u) {
              TensorT<S>& gu = tape.grad(u);
              S* gurow = gu.ptr() + static_cast<std::size_t>(i) * d_in;
              for (int k = 0; k < d_in; ++k) {
                const S* wrow = wmat + static_cast<std::size_t>(k) * d_out;
                S acc = 0;
                for (int d = 0; d < d_out; ++d) acc += grow[d] * wrow[d];
                gurow[k] += acc;
              }
            }
            if (need_w) {
              TensorT<S>& gw = tape.grad(w);
              S* gwmat = gw.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_in * d_out;
              for (int k = 0; k < d_in; ++k) {
                const S uk = urow[k];
                S* gwrow = gwmat + static_cast<std::size_t>(k) * d_out;
                for (int d = 0; d < d_out; ++d) gwrow[d] += uk * grow[d];
              }
            }
          }
      });
}

// s[j] = sum_i c[i][j] * u_hat[i][j].
// c [N_in, N_out], u_hat [N_in, N_out, D_out] -> [N_out, D_out]
template <typename S>
NodeOf<S> weighted_sum(TapeT<S>& t, NodeOf<S> c, NodeOf<S> u_hat) {
  const TensorT<S>& cv = t.value(c);
  const TensorT<S>& hv = t.value(u_hat);
  if (cv.rank() != 2 || hv.rank() != 3 || cv.dim(0) != hv.dim(0) || cv.dim(1) != hv.dim(1))
    throw ShapeError("weighted_sum: c " + shape_str(cv.shape) + " vs u_hat " +
                     shape_str(hv.shape));
  const int n_in = cv.dim(0), n_out = cv.dim(1), d_out = hv.dim(2);

  TensorT<S> out({n_out, d_out});
  for (int i = 0; i < n_in; ++i)
    for (int j = 0; j < n_out; ++j) {
      const S cij = cv(i, j);
      const S* hrow = hv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
      S* orow = out.ptr() + static_cast<std::size_t>(j) * d_out;
      for (int d = 0; d < d_out; ++d) orow[d] += cij * hrow[d];
    }

  return t.record("weighted_sum", {c, u_hat}, std::move(out),
                  [c, u_hat, n_in, n_out, d_out](TapeT<S>& tape, NodeOf<S> self) {
                    const TensorT<S>& g = tape.grad(self);
                    const TensorT<S>& cv = tape.value(c);
                    const TensorT<S>& hv = tape.value(u_hat);
                    const bool need_c = tape.requires_grad(c);
                    const bool need_h = tape.requires_grad(u_hat);
                    for (int i = 0; i < n_in; ++i)
                      for (int j = 0; j < n_out; ++j) {
                        const S* grow = g.ptr() + static_cast<std::size_t>(j) * d_out;
                        const S* hrow =
                            hv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
                        if (need_c) {
                          S acc = 0;
                          for (int d = 0; d < d_out; ++d) acc += grow[d] * hrow[d];
                          tape.grad(c)(i, j) += acc;
                        }
                        if (need_h) {
                          const S cij = cv(i, j);
                          S* ghrow = tape.grad(u_hat).ptr() +
                                     (static_cast<std::size_t>(i) * n_out + j) * d_out;
                          for (int d = 0; d < d_out; ++d) ghrow[d] += cij * grow[d];
                        }
                      }
                  });
}

// Agreement logits: a[i][j] = V[j] . u_hat[i][j].
// v [N_out, D_out], u_hat [N_in, N_out, D_out] -> [N_in, N_out]
template <typename S>
NodeOf<S> agreement(TapeT<S>& t, NodeOf<S> v, NodeOf<S> u_hat) {
  const TensorT<S>& vv = t.value(v);
  const TensorT<S>& hv = t.value(u_hat);
  if (vv.rank() != 2 || hv.rank() != 3 || vv.dim(0) != hv.dim(1) || vv.dim(1) != hv.dim(2))
    throw ShapeError("agreement: V " + shape_str(vv.shape) + " vs u_hat " + shape_str(hv.shape));
  const int n_in = hv.dim(0), n_out = vv.dim(0), d_out = vv.dim(1);

  TensorT<S> out({n_in, n_out});
  for (int i = 0; i < n_in; ++i)
    for (int j = 0; j < n_out; ++j) {
      const S* vrow = vv.ptr() + static_cast<std::size_t>(j) * d_out;
      const S* hrow = hv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
      S acc = 0;
      for (int d = 0; d < d_out; ++d) acc += vrow[d] * hrow[d];
      out(i, j) = acc;
    }

  return t.record("agreement", {v, u_hat}, std::move(out),
                  [v, u_hat, n_in, n_out, d_out](TapeT<S>& tape, NodeOf<S> self) {
                    const TensorT<S>& g = tape.grad(self);
                    const TensorT<S>& vv = tape.value(v);
                    const TensorT<S>& hv = tape.value(u_hat);
                    const bool need_v = tape.requires_grad(v);
                    const bool need_h = tape.requires_grad(u_hat);
                    for (int i = 0; i < n_in; ++i)
                      for (int j = 0; j < n_out; ++j) {
                        const S gij = g(i, j);
                        const S* vrow = vv.ptr() + static_cast<std::size_t>(j) * d_out;
                        const S* hrow =
                            hv.ptr() + (static_cast<std::size_t>(i) * n_out + j) * d_out;
                        if (need_v) {
                          S* gvrow = tape.grad(v).ptr() + static_cast<std::size_t>(j) * d_out;
                          for (int d = 0; d < d_out; ++d) gvrow[d] += gij * hrow[d];
                        }
                        if (need_h) {
                          S* ghrow = tape.grad(u_hat).ptr() +
                                     (static_cast<std::size_t>(i) * n_out + j) * d_out;
                          for (int d = 0; d < d_out; ++d) ghrow[d] += gij * vrow[d];
                        }
                      }
                  });
}

// Soft-updated dynamic routing over one sample.
//
//   u_hat = caps_transform(U, W)
//   c     = softmax_rows(b)
//   repeat r times:
//     c_hat = softmax_rows(b)
//     c     = c + eta * c_hat
//     s     = weighted_sum(c, u_hat)
//     V     = squash_rows(s)
//     b     = b + agreement(V, u_hat)
//
// b evolves on the tape (a per-sample working chain hanging off the
// persistent parameter leaf), so gradients flow through every iteration and
// back into the prior. The final accumulated c has row sums 1 + r*eta.
template <typename S>
NodeOf<S> route(TapeT<S>& t, NodeOf<S> u, NodeOf<S> w, NodeOf<S> b, int r, S eta,
                RoutingTraceT<S>* trace = nullptr) {
  if (r < 1) throw ConfigError("route: r must be >= 1");
  if (!(eta > S(0))) throw ConfigError("route: eta must be positive");

  const auto u_hat = caps_transform(t, u, w);
  auto b_work = b;
  auto c = softmax_rows(t, b_work);
  NodeOf<S> v = -1;
  if (trace) trace->increments.clear();
  for (int iter = 0; iter < r; ++iter) {
    const auto c_hat = softmax_rows(t, b_work);
    c = add_scaled(t, c, c_hat, eta);
    const auto s = weighted_sum(t, c, u_hat);
    v = squash_rows(t, s);
    const auto delta = agreement(t, v, u_hat);
    if (trace) trace->increments.push_back(t.value(delta));
    b_work = add(t, b_work, delta);
  }
  if (trace) {
    trace->coupling = t.value(c);
    trace->v = t.value(v);
  }
  return v;
}

}  // namespace ops

// argmax of capsule norms; ties break to the lowest index.
template <typename S>
int predict_class(const TensorT<S>& v) {
  if (v.rank() != 2) throw ShapeError("predict_class: V must be rank 2");
  int best = 0;
  S best_n2 = 0;
  for (int j = 0; j < v.dim(0); ++j) {
    S n2 = 0;
    for (int d = 0; d < v.dim(1); ++d) n2 += v(j, d) * v(j, d);
    if (j == 0 || n2 > best_n2) {
      best = j;
      best_n2 = n2;
    }
  }
  return best;
}

// Per-class scores (capsule norms) for one output tensor.
template <typename S>
std::vector<S> class_scores(const TensorT<S>& v) {
  if (v.rank() != 2) throw ShapeError("class_scores: V must be rank 2");
  std::vector<S> out(static_cast<std::size_t>(v.dim(0)));
  for (int j = 0; j < v.dim(0); ++j) {
    S n2 = 0;
    for (int d = 0; d < v.dim(1); ++d) n2 += v(j, d) * v(j, d);
    out[static_cast<std::size_t>(j)] = std::sqrt(n2);
  }
  return out;
}

}  // namespace arcnet
