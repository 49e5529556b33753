#pragma once

#include <cmath>
#include <vector>

#include "arcnet/ops.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"
#include "arcnet/window.hpp"

namespace arcnet {

// Geometry of the encoder output.
inline constexpr int kCapsPerImu = 12;   // primary capsules per IMU
inline constexpr int kCapsDim = 96;      // primary capsule dimension

// Shared per-IMU CNN parameters. One set serves every IMU slot.
//
// Layer geometry (valid convolutions throughout):
//   L1: 64 kernels (1x9),  stride (1,1) -> 64 x 6 x 120, ReLU
//   L2: 96 kernels (3x20), stride (3,4) -> 96 x 2 x 26,  ReLU
//   L3: 96 kernels (2x15), stride (1,1) -> 96 x 1 x 12,  no activation
// L1 filters each sensor row on its own; L2's height-3/stride-3 kernel keeps
// the accelerometer rows {0,1,2} and gyroscope rows {3,4,5} in separate
// output rows; L3 fuses the two. The 12 time positions of L3 become the 12
// capsules, each carrying the 96 channel values.
template <typename S>
struct EncoderParamsT {
  TensorT<S> k1, b1;  // [64,1,1,9],  [64]
  TensorT<S> k2, b2;  // [96,64,3,20], [96]
  TensorT<S> k3, b3;  // [96,96,2,15], [96]

  // Uniform in +-sqrt(1/fan_in), drawn in declaration order, entries in
  // row-major order. The draw order is part of the determinism contract.
  static EncoderParamsT init(Rng& rng) {
    EncoderParamsT p;
    p.k1 = draw(rng, {64, 1, 1, 9}, 1 * 1 * 9);
    p.b1 = draw(rng, {64}, 1 * 1 * 9);
    p.k2 = draw(rng, {96, 64, 3, 20}, 64 * 3 * 20);
    p.b2 = draw(rng, {96}, 64 * 3 * 20);
    p.k3 = draw(rng, {96, 96, 2, 15}, 96 * 2 * 15);
    p.b3 = draw(rng, {96}, 96 * 2 * 15);
    return p;
  }

  static TensorT<S> draw(Rng& rng, Shape shape, int fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    TensorT<S> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
    return t;
  }
};

using EncoderParams = EncoderParamsT<float>;

// Tape-node handles for one registered parameter set.
template <typename S>
struct EncoderNodesT {
  using NodeId = typename TapeT<S>::NodeId;
  NodeId k1, b1, k2, b2, k3, b3;

  static EncoderNodesT leaves(TapeT<S>& t, const EncoderParamsT<S>& p) {
    return {t.leaf(p.k1, true), t.leaf(p.b1, true), t.leaf(p.k2, true),
            t.leaf(p.b2, true), t.leaf(p.k3, true), t.leaf(p.b3, true)};
  }
};

namespace ops {

// One IMU slab [6,128] -> primary capsules [12,96].
template <typename S>
NodeOf<S> encode_imu(TapeT<S>& t, NodeOf<S> window, const EncoderNodesT<S>& enc) {
  const TensorT<S>& w = t.value(window);
  if (w.rank() != 2 || w.dim(0) != kImuRows || w.dim(1) != kWindowLen)
    throw ShapeError("encode_imu: window must be (6,128), got " + shape_str(w.shape));

  const auto x0 = reshape(t, window, {1, kImuRows, kWindowLen});
  const auto x1 = relu(t, conv2d(t, x0, enc.k1, enc.b1, 1, 1));  // 64x6x120
  const auto x2 = relu(t, conv2d(t, x1, enc.k2, enc.b2, 3, 4));  // 96x2x26
  const auto x3 = conv2d(t, x2, enc.k3, enc.b3, 1, 1);           // 96x1x12
  const auto flat = reshape(t, x3, {kCapsDim, kCapsPerImu});
  return transpose2d(t, flat);  // 12x96, capsule index = time position
}

// Batch element [n_imu,6,128] -> concatenated primary capsules [12*n_imu,96],
// all IMUs encoded with the same shared parameters, in IMU order.
template <typename S>
NodeOf<S> encode_all(TapeT<S>& t, NodeOf<S> sample, const EncoderNodesT<S>& enc) {
  const TensorT<S>& v = t.value(sample);
  if (v.rank() != 3 || v.dim(1) != kImuRows || v.dim(2) != kWindowLen)
    throw ShapeError("encode_all: sample must be (n_imu,6,128), got " + shape_str(v.shape));
  const int n_imu = v.dim(0);

  std::vector<NodeOf<S>> parts;
  parts.reserve(static_cast<std::size_t>(n_imu));
  for (int i = 0; i < n_imu; ++i) parts.push_back(encode_imu(t, select0(t, sample, i), enc));
  return n_imu == 1 ? parts[0] : concat_rows(t, parts);
}

}  // namespace ops
}  // namespace arcnet
