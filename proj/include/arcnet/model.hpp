#pragma once

#include <string>
#include <vector>

#include "arcnet/capsules.hpp"
#include "arcnet/encoder.hpp"
#include "arcnet/loss.hpp"
#include "arcnet/ops.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"
#include "arcnet/tensor.hpp"

namespace arcnet {

// Architecture settings. n_in of the capsule layer is always 12 * n_imu.
struct ModelConfig {
  int n_imu = 3;
  int n_classes = 12;
  int d_out = 16;   // output capsule dimension
  int r = 3;        // routing iterations
  float eta = 0.1f; // soft-update coefficient

  int caps_in() const { return kCapsPerImu * n_imu; }
};

// Full trainable state. Tensor order here defines the parameter order used
// by the optimizer and the checkpoint file.
template <typename S>
struct ModelParamsT {
  EncoderParamsT<S> enc;
  CapsuleParamsT<S> caps;

  static ModelParamsT init(const ModelConfig& cfg, Rng& rng) {
    ModelParamsT p;
    p.enc = EncoderParamsT<S>::init(rng);
    p.caps = CapsuleParamsT<S>::init(cfg.caps_in(), cfg.n_classes, kCapsDim, cfg.d_out, cfg.r,
                                     static_cast<S>(cfg.eta), rng);
    return p;
  }

  // Stable names/order shared by optimizer state and the checkpoint format.
  std::vector<std::pair<std::string, TensorT<S>*>> named_tensors() {
    return {{"enc.k1", &enc.k1},   {"enc.b1", &enc.b1}, {"enc.k2", &enc.k2},
            {"enc.b2", &enc.b2},   {"enc.k3", &enc.k3}, {"enc.b3", &enc.b3},
            {"caps.w", &caps.w},   {"caps.b", &caps.b}};
  }

  std::vector<std::pair<std::string, const TensorT<S>*>> named_tensors() const {
    return {{"enc.k1", &enc.k1},   {"enc.b1", &enc.b1}, {"enc.k2", &enc.k2},
            {"enc.b2", &enc.b2},   {"enc.k3", &enc.k3}, {"enc.b3", &enc.b3},
            {"caps.w", &caps.w},   {"caps.b", &caps.b}};
  }
};

using ModelParams = ModelParamsT<float>;

// Parameter leaves registered on one tape.
template <typename S>
struct ModelNodesT {
  using NodeId = typename TapeT<S>::NodeId;
  EncoderNodesT<S> enc;
  CapsuleNodesT<S> caps;

  static ModelNodesT leaves(TapeT<S>& t, const ModelParamsT<S>& p) {
    return {EncoderNodesT<S>::leaves(t, p.enc), CapsuleNodesT<S>::leaves(t, p.caps)};
  }

  // Same order as ModelParamsT::named_tensors.
  std::vector<NodeId> ordered() const {
    return {enc.k1, enc.b1, enc.k2, enc.b2, enc.k3, enc.b3, caps.w, caps.b};
  }
};

namespace ops {

// One sample [n_imu,6,128] -> output capsules [n_classes, d_out]:
// shared encoder, squash into primary capsules, soft-updated routing.
template <typename S>
NodeOf<S> model_forward(TapeT<S>& t, NodeOf<S> sample, const ModelNodesT<S>& nodes,
                        const ModelConfig& cfg, RoutingTraceT<S>* trace = nullptr) {
  const auto primary = encode_all(t, sample, nodes.enc);
  const auto squashed = squash_rows(t, primary);
  return route(t, squashed, nodes.caps.w, nodes.caps.b, cfg.r, static_cast<S>(cfg.eta), trace);
}

// Per-class capsule norms of one sample, the model's score vector.
template <typename S>
NodeOf<S> model_norms(TapeT<S>& t, NodeOf<S> sample, const ModelNodesT<S>& nodes,
                      const ModelConfig& cfg) {
  return row_norms(t, model_forward(t, sample, nodes, cfg));
}

}  // namespace ops
}  // namespace arcnet
