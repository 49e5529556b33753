#pragma once

#include <algorithm>
#include <string>

#include "arcnet/errors.hpp"
#include "arcnet/ops.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

// Margin loss constants. The absent-class term is down-weighted by
// lambda_down so early training does not shrink every capsule.
struct MarginConfig {
  float m_plus = 0.95f;
  float m_minus = 0.05f;
  float lambda_down = 0.5f;
};

namespace ops {

// Margin loss of one sample from its per-class capsule norms [C]:
//   sum_k T_k * max(0, m+ - n_k)^2 + lambda * (1 - T_k) * max(0, n_k - m-)^2
// with T_k = 1 iff k == label. Batch averaging is done by the caller.
template <typename S>
NodeOf<S> margin_loss(TapeT<S>& t, NodeOf<S> norms, int label, const MarginConfig& cfg = {}) {
  const TensorT<S>& n = t.value(norms);
  if (n.rank() != 1) throw ShapeError("margin_loss: norms must be rank 1");
  if (label < 0 || label >= n.dim(0))
    throw DataError("margin_loss: label " + std::to_string(label) + " out of range for " +
                    std::to_string(n.dim(0)) + " classes");

  const S mp = static_cast<S>(cfg.m_plus);
  const S mm = static_cast<S>(cfg.m_minus);
  const S lam = static_cast<S>(cfg.lambda_down);

  S loss = 0;
  for (int k = 0; k < n.dim(0); ++k) {
    if (k == label) {
      const S hi = std::max(S(0), mp - n(k));
      loss += hi * hi;
    } else {
      const S lo = std::max(S(0), n(k) - mm);
      loss += lam * lo * lo;
    }
  }

  return t.record("margin_loss", {norms}, TensorT<S>::scalar(loss),
                  [norms, label, mp, mm, lam](TapeT<S>& tape, NodeOf<S> self) {
                    const S g = tape.grad(self)(0);
                    const TensorT<S>& n = tape.value(norms);
                    TensorT<S>& gn = tape.grad(norms);
                    for (int k = 0; k < n.dim(0); ++k) {
                      if (k == label) {
                        const S hi = std::max(S(0), mp - n(k));
                        gn(k) += g * (S(-2) * hi);
                      } else {
                        const S lo = std::max(S(0), n(k) - mm);
                        gn(k) += g * (S(2) * lam * lo);
                      }
                    }
                  });
}

}  // namespace ops
}  // namespace arcnet
