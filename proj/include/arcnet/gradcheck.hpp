#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "arcnet/ops.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

struct GradCheckOptions {
  // Central-difference step applied to the float64 re-evaluation.
  double step = 1e-3;
  // Accept when |analytic - fd| / max(|analytic|, |fd|, 1) <= tol.
  double tol = 1e-3;
  // Entries sampled per input tensor; 0 checks every entry.
  std::size_t max_entries_per_input = 64;
  std::uint64_t seed = 0x415243u;  // sampling seed, fixed for reproducibility
};

struct GradCheckEntry {
  std::size_t input = 0;  // index into the inputs vector
  std::size_t index = 0;  // flat element index within that input
  double analytic = 0;
  double fd = 0;
  double rel_err = 0;
};

struct GradCheckReport {
  bool ok = true;
  double max_rel_err = 0;
  std::size_t checked = 0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
};

namespace detail {

inline std::vector<std::size_t> sample_indices(std::size_t size, std::size_t want, Rng& rng) {
  std::vector<std::size_t> out;
  if (want == 0 || want >= size) {
    out.resize(size);
    for (std::size_t i = 0; i < size; ++i) out[i] = i;
    return out;
  }
  std::unordered_set<std::size_t> seen;
  out.reserve(want);
  while (out.size() < want) {
    const std::size_t idx = static_cast<std::size_t>(rng.below(size));
    if (seen.insert(idx).second) out.push_back(idx);
  }
  return out;
}

}  // namespace detail

// Compares reverse-mode gradients against central finite differences.
//
// `build` assembles the graph on any scalar type: it is called as
// build(tape, leaf_ids) and must return the root node id. Non-scalar roots
// are reduced with sum_all so every graph checks against a single scalar.
// The analytic pass runs on the float32 tape (the type training uses); the
// finite differences re-evaluate the same builder on float64 so the
// quotient is not drowned in single-precision rounding.
template <typename Builder>
GradCheckReport grad_check(Builder&& build, const std::vector<TensorT<double>>& inputs,
                           const GradCheckOptions& opt = {}) {
  // Analytic gradients at float32.
  std::vector<TensorT<double>> analytic;
  {
    TapeT<float> t;
    std::vector<TapeT<float>::NodeId> xs;
    xs.reserve(inputs.size());
    for (const auto& in : inputs) xs.push_back(t.leaf(in.template cast<float>(), true));
    auto root = build(t, xs);
    if (t.value(root).size() != 1) root = ops::sum_all(t, root);
    t.backward(root);
    analytic.reserve(xs.size());
    for (const auto id : xs) analytic.push_back(t.grad_or_zero(id).template cast<double>());
  }

  // Scalar objective at float64 for the difference quotients.
  const auto eval = [&](const std::vector<TensorT<double>>& pts) {
    TapeT<double> t(false);
    std::vector<TapeT<double>::NodeId> xs;
    xs.reserve(pts.size());
    for (const auto& in : pts) xs.push_back(t.leaf(in, false));
    auto root = build(t, xs);
    if (t.value(root).size() != 1) root = ops::sum_all(t, root);
    return t.value(root)(0);
  };

  GradCheckReport report;
  Rng rng(opt.seed);
  std::vector<TensorT<double>> work = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto indices =
        detail::sample_indices(inputs[i].size(), opt.max_entries_per_input, rng);
    for (const std::size_t idx : indices) {
      const double saved = work[i].data[idx];
      work[i].data[idx] = saved + opt.step;
      const double f_plus = eval(work);
      work[i].data[idx] = saved - opt.step;
      const double f_minus = eval(work);
      work[i].data[idx] = saved;

      GradCheckEntry e;
      e.input = i;
      e.index = idx;
      e.analytic = analytic[i].data[idx];
      e.fd = (f_plus - f_minus) / (2 * opt.step);
      e.rel_err = std::abs(e.analytic - e.fd) /
                  std::max({std::abs(e.analytic), std::abs(e.fd), 1.0});
      ++report.checked;
      if (e.rel_err > report.max_rel_err) {
        report.max_rel_err = e.rel_err;
        report.worst = e;
      }
      if (e.rel_err > opt.tol) {
        report.ok = false;
        report.failures.push_back(e);
      }
    }
  }
  return report;
}

}  // namespace arcnet
