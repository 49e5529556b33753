#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "arcnet/checkpoint.hpp"
#include "arcnet/dataset.hpp"
#include "arcnet/errors.hpp"
#include "arcnet/metrics.hpp"
#include "arcnet/model.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tensor.hpp"
#include "arcnet/train.hpp"

namespace arcnet {

// Modality corruption: per window, with the given probability, one
// uniformly chosen IMU slab is replaced by zeros. chosen records the zeroed
// IMU index per window, -1 where the window was left alone. Everything
// outside the zeroed slab stays bit-identical.
inline std::vector<ImuWindow> corrupt_modality(const std::vector<ImuWindow>& batch, Rng& rng,
                                               double probability = 1.0,
                                               std::vector<int>* chosen = nullptr) {
  if (batch.empty()) throw DataError("corrupt_modality: empty batch");
  if (!(probability >= 0.0 && probability <= 1.0))
    throw ConfigError("corruption probability must be in [0, 1]");
  const int n_imu = batch.front().data.dim(0);
  if (n_imu < 2)
    throw DataError("corrupt_modality: need at least two IMUs, nothing left to fuse otherwise");

  std::vector<ImuWindow> out = batch;
  if (chosen) chosen->assign(batch.size(), -1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].data.dim(0) != n_imu)
      throw DataError("corrupt_modality: windows disagree on IMU count");
    if (rng.uniform() >= probability) continue;
    const int idx = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_imu)));
    for (int row = 0; row < kImuRows; ++row)
      for (int t = 0; t < kWindowLen; ++t) out[i].data(idx, row, t) = 0.0f;
    if (chosen) (*chosen)[i] = idx;
  }
  return out;
}

struct CorruptionResult {
  EvalReport clean;
  EvalReport corrupted;
  double delta_accuracy_points = 0.0;  // clean - corrupted, percentage points
  double delta_wf1_points = 0.0;
  std::vector<int> chosen;
};

namespace detail {

inline void require_compatible(const Checkpoint& ckpt, const std::vector<ImuWindow>& windows,
                               const std::vector<std::string>& class_names) {
  if (windows.empty()) throw DataError("evaluation split is empty");
  if (static_cast<int>(class_names.size()) != ckpt.config.n_classes)
    throw ShapeError("checkpoint expects " + std::to_string(ckpt.config.n_classes) +
                     " classes, split has " + std::to_string(class_names.size()));
  if (windows.front().data.dim(0) != ckpt.config.n_imu)
    throw ShapeError("checkpoint expects " + std::to_string(ckpt.config.n_imu) +
                     " IMUs, split has " + std::to_string(windows.front().data.dim(0)));
}

}  // namespace detail

// Full-split inference under one or more checkpoints; several checkpoints
// vote through summed class scores.
inline EvalReport evaluate(const std::vector<Checkpoint>& checkpoints,
                           const std::vector<ImuWindow>& windows,
                           const std::vector<std::string>& class_names) {
  if (checkpoints.empty()) throw ConfigError("evaluate needs at least one checkpoint");
  for (const auto& c : checkpoints) detail::require_compatible(c, windows, class_names);
  const auto predictions = ensemble_vote(checkpoints, windows);
  std::vector<int> labels;
  labels.reserve(windows.size());
  for (const auto& w : windows) labels.push_back(w.label);
  return classification_report(predictions, labels, static_cast<int>(class_names.size()),
                               class_names);
}

// Clean-versus-corrupted comparison on one split. probability is a
// diagnostic knob: 1 corrupts every window (the default protocol), 0 turns
// the corruption into a no-op and the deltas collapse to zero.
inline CorruptionResult run_corruption_test(const Checkpoint& ckpt,
                                            const std::vector<ImuWindow>& windows,
                                            const std::vector<std::string>& class_names,
                                            std::uint64_t seed, double probability = 1.0) {
  detail::require_compatible(ckpt, windows, class_names);
  CorruptionResult result;
  result.clean = evaluate({ckpt}, windows, class_names);
  Rng rng(seed);
  const auto corrupted = corrupt_modality(windows, rng, probability, &result.chosen);
  result.corrupted = evaluate({ckpt}, corrupted, class_names);
  result.delta_accuracy_points = 100.0 * (result.clean.accuracy - result.corrupted.accuracy);
  result.delta_wf1_points = 100.0 * (result.clean.weighted_f1 - result.corrupted.weighted_f1);
  return result;
}

inline void write_corruption_csv(const std::string& path, const CorruptionResult& result) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open corruption report: " + path);
  os.precision(12);
  os << "# deltas\n";
  os << "delta_accuracy_points," << result.delta_accuracy_points << "\n";
  os << "delta_weighted_f1_points," << result.delta_wf1_points << "\n";
  os << "# clean\n" << report_to_csv(result.clean);
  os << "# corrupted\n" << report_to_csv(result.corrupted);
  if (!os) throw DataError("failed writing corruption report: " + path);
}

enum class HeatmapAggregate { kMean, kMax };

// Routing prior summarized per IMU position: values[m][j] aggregates the
// learned prior over position m's 12 capsule rows for class j, then each
// class column is min-max normalized into [0, 1]. A constant column carries
// no preference and maps to all zeros.
struct PriorHeatmap {
  Tensor values;  // [n_imu, C]
  std::vector<std::string> imu_names;
  std::vector<std::string> class_names;
};

inline PriorHeatmap prior_heatmap(const Tensor& b, const std::vector<std::string>& imu_names,
                                  const std::vector<std::string>& class_names,
                                  HeatmapAggregate aggregate = HeatmapAggregate::kMean) {
  if (b.rank() != 2) throw ShapeError("prior_heatmap: b must be rank 2");
  if (b.dim(0) % kCapsPerImu != 0)
    throw ShapeError("prior_heatmap: b has " + std::to_string(b.dim(0)) +
                     " rows, not a multiple of " + std::to_string(kCapsPerImu));
  const int n_imu = b.dim(0) / kCapsPerImu;
  const int n_classes = b.dim(1);
  if (static_cast<int>(imu_names.size()) != n_imu)
    throw ShapeError("prior_heatmap: " + std::to_string(imu_names.size()) + " IMU names for " +
                     std::to_string(n_imu) + " positions");
  if (static_cast<int>(class_names.size()) != n_classes)
    throw ShapeError("prior_heatmap: " + std::to_string(class_names.size()) +
                     " class names for " + std::to_string(n_classes) + " classes");

  PriorHeatmap map;
  map.imu_names = imu_names;
  map.class_names = class_names;
  map.values = Tensor({n_imu, n_classes});
  for (int m = 0; m < n_imu; ++m)
    for (int j = 0; j < n_classes; ++j) {
      double agg = aggregate == HeatmapAggregate::kMax ? -std::numeric_limits<double>::infinity()
                                                       : 0.0;
      for (int k = 0; k < kCapsPerImu; ++k) {
        const double v = b(m * kCapsPerImu + k, j);
        if (aggregate == HeatmapAggregate::kMax)
          agg = std::max(agg, v);
        else
          agg += v / kCapsPerImu;
      }
      map.values(m, j) = static_cast<float>(agg);
    }

  for (int j = 0; j < n_classes; ++j) {
    float lo = map.values(0, j), hi = map.values(0, j);
    for (int m = 1; m < n_imu; ++m) {
      lo = std::min(lo, map.values(m, j));
      hi = std::max(hi, map.values(m, j));
    }
    const float span = hi - lo;
    for (int m = 0; m < n_imu; ++m)
      map.values(m, j) = span < 1e-12f ? 0.0f : (map.values(m, j) - lo) / span;
  }
  return map;
}

inline PriorHeatmap prior_heatmap(const Checkpoint& ckpt,
                                  const std::vector<std::string>& imu_names,
                                  const std::vector<std::string>& class_names,
                                  HeatmapAggregate aggregate = HeatmapAggregate::kMean) {
  return prior_heatmap(ckpt.params.caps.b, imu_names, class_names, aggregate);
}

inline void write_heatmap_csv(const std::string& path, const PriorHeatmap& map) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open heatmap csv: " + path);
  os.precision(12);
  os << "imu";
  for (const auto& name : map.class_names) os << ',' << name;
  os << '\n';
  for (int m = 0; m < map.values.dim(0); ++m) {
    os << map.imu_names[static_cast<std::size_t>(m)];
    for (int j = 0; j < map.values.dim(1); ++j) os << ',' << map.values(m, j);
    os << '\n';
  }
  if (!os) throw DataError("failed writing heatmap csv: " + path);
}

// 8-bit binary portable graymap, one pixel per heatmap cell, 255 = full
// prior mass.
inline void write_heatmap_pgm(const std::string& path, const PriorHeatmap& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open heatmap image: " + path);
  os << "P5\n" << map.values.dim(1) << ' ' << map.values.dim(0) << "\n255\n";
  for (int m = 0; m < map.values.dim(0); ++m)
    for (int j = 0; j < map.values.dim(1); ++j) {
      const float v = std::clamp(map.values(m, j), 0.0f, 1.0f);
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  if (!os) throw DataError("failed writing heatmap image: " + path);
}

}  // namespace arcnet
