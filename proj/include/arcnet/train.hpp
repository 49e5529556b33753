#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "arcnet/capsules.hpp"
#include "arcnet/checkpoint.hpp"
#include "arcnet/dataset.hpp"
#include "arcnet/errors.hpp"
#include "arcnet/model.hpp"
#include "arcnet/ops.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/tape.hpp"

namespace arcnet {

// Adaptive-moment optimizer with bias correction. Moment buffers are sized
// on the first step and must keep their shapes afterwards.
template <typename S>
class AdamT {
 public:
  explicit AdamT(S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  long steps() const { return steps_; }

  void step(const std::vector<TensorT<S>*>& params, const std::vector<TensorT<S>>& grads, S lr) {
    if (params.size() != grads.size())
      throw ShapeError("optimizer got " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(params.size()) + " parameters");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.emplace_back(p->shape);
        v_.emplace_back(p->shape);
      }
    }
    if (m_.size() != params.size()) throw ShapeError("optimizer state does not match parameters");
    ++steps_;
    const S c1 = static_cast<S>(1.0 - std::pow(static_cast<double>(beta1_), steps_));
    const S c2 = static_cast<S>(1.0 - std::pow(static_cast<double>(beta2_), steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& g = grads[i];
      if (!p.same_shape(g) || !p.same_shape(m_[i]))
        throw ShapeError("optimizer shape mismatch on parameter " + std::to_string(i));
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        m_[i].data[k] = beta1_ * m_[i].data[k] + (S(1) - beta1_) * g.data[k];
        v_[i].data[k] = beta2_ * v_[i].data[k] + (S(1) - beta2_) * g.data[k] * g.data[k];
        const S m_hat = m_[i].data[k] / c1;
        const S v_hat = v_[i].data[k] / c2;
        p.data[k] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
      }
    }
  }

 private:
  S beta1_, beta2_, eps_;
  long steps_ = 0;
  std::vector<TensorT<S>> m_;
  std::vector<TensorT<S>> v_;
};

using Adam = AdamT<float>;

struct TrainConfig {
  std::string dataset = "synth";
  int batch_size = 64;
  int epochs = 200;
  double initial_lr = 1e-3;
  double lr_decay = 0.98;
  int r = 3;
  float eta = 0.1f;
  int d_out = 16;
  std::uint64_t seed = 1;
  int ensemble_k = 5;
  int threads = 1;
  bool deterministic = true;
  // When positive, training stops once running train accuracy reaches the
  // target and a confirmation pass over the train split agrees.
  float target_train_acc = 0.0f;

  int effective_threads() const { return deterministic ? 1 : std::max(1, threads); }

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
    if (r < 1) throw ConfigError("routing iteration count must be >= 1");
    if (!(eta > 0.0f)) throw ConfigError("soft-update coefficient must be positive");
    if (d_out < 1) throw ConfigError("d_out must be >= 1");
    if (ensemble_k < 1) throw ConfigError("ensemble_k must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (!(target_train_acc >= 0.0f && target_train_acc <= 1.0f))
      throw ConfigError("target_train_acc must be in [0, 1]");
  }

  // Canonical low-to-high key order; the hash of this text is stamped into
  // every checkpoint the run writes. Floats use the shortest round-trip
  // spelling so the text is stable across platforms.
  std::string canonical() const {
    const auto shortest = [](auto v) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      return std::string(buf, res.ptr);
    };
    std::ostringstream os;
    os << "batch_size = " << batch_size << "\n"
       << "d_out = " << d_out << "\n"
       << "dataset = " << dataset << "\n"
       << "deterministic = " << (deterministic ? 1 : 0) << "\n"
       << "ensemble_k = " << ensemble_k << "\n"
       << "epochs = " << epochs << "\n"
       << "eta = " << shortest(eta) << "\n"
       << "initial_lr = " << shortest(initial_lr) << "\n"
       << "lr_decay = " << shortest(lr_decay) << "\n"
       << "r = " << r << "\n"
       << "seed = " << seed << "\n"
       << "target_train_acc = " << shortest(target_train_acc) << "\n"
       << "threads = " << threads << "\n";
    return os.str();
  }
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::vector<std::string> checkpoints;  // retained paths, best validation loss first
  std::string metrics_path;
  bool reached_target = false;
  int final_epoch = -1;
};

// Per-class scores (capsule norms) of one window, inference only.
inline std::vector<float> model_scores(const ModelParams& params, const ModelConfig& cfg,
                                       const Tensor& sample) {
  TapeT<float> t(false);
  const auto nodes = ModelNodesT<float>::leaves(t, params);
  const auto v = ops::model_forward(t, t.constant(sample), nodes, cfg);
  return class_scores(t.value(v));
}

struct InferenceStats {
  std::vector<int> predictions;
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// Full forward pass over a window list: predictions, mean margin loss and
// accuracy against the stored labels.
inline InferenceStats infer_windows(const ModelParams& params, const ModelConfig& cfg,
                                    const std::vector<ImuWindow>& windows) {
  if (windows.empty()) throw DataError("inference over an empty window list");
  InferenceStats out;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& w : windows) {
    TapeT<float> t(false);
    const auto nodes = ModelNodesT<float>::leaves(t, params);
    const auto v = ops::model_forward(t, t.constant(w.data), nodes, cfg);
    const auto loss = ops::margin_loss(t, ops::row_norms(t, v), w.label);
    loss_sum += t.value(loss).data[0];
    const int pred = predict_class(t.value(v));
    out.predictions.push_back(pred);
    if (pred == w.label) ++correct;
  }
  out.mean_loss = loss_sum / static_cast<double>(windows.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(windows.size());
  return out;
}

namespace detail {

struct BatchChunk {
  double loss_sum = 0.0;
  std::vector<Tensor> grads;
  std::vector<int> predictions;
};

// Forward + backward over one contiguous slice of the shuffled batch. Every
// chunk owns a private tape, so chunks can run on separate threads; the
// caller reduces the gradients in chunk order to keep sums deterministic.
inline BatchChunk batch_chunk(const ModelParams& params, const ModelConfig& cfg,
                              const std::vector<ImuWindow>& windows,
                              const std::vector<std::size_t>& order, std::size_t begin,
                              std::size_t end) {
  TapeT<float> t;
  const auto nodes = ModelNodesT<float>::leaves(t, params);
  std::vector<typename TapeT<float>::NodeId> losses;
  BatchChunk chunk;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& w = windows[order[i]];
    const auto v = ops::model_forward(t, t.constant(w.data), nodes, cfg);
    losses.push_back(ops::margin_loss(t, ops::row_norms(t, v), w.label));
    chunk.predictions.push_back(predict_class(t.value(v)));
  }
  const auto total = ops::add_n(t, losses);
  chunk.loss_sum = t.value(total).data[0];
  t.backward(total);
  for (const auto id : nodes.ordered()) chunk.grads.push_back(t.grad_or_zero(id));
  return chunk;
}

struct RetainedCheckpoint {
  double val_loss = 0.0;
  int epoch = 0;
  std::string path;
};

inline std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%04d.arcc", epoch);
  return buf;
}

}  // namespace detail

// Deterministic training loop: seeded shuffle, minibatch gradient descent
// with the adaptive-moment optimizer, exponential learning rate decay, CSV
// metrics log, and retention of the best checkpoints by validation loss.
inline TrainResult train(const TrainConfig& config, const DatasetSplit& data,
                         const std::string& out_dir) {
  config.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.validation.empty()) throw DataError("validation split is empty");
  const int n_classes = static_cast<int>(data.class_names.size());
  detail::check_windows(data.train, n_classes);
  detail::check_windows(data.validation, n_classes);

  ModelConfig cfg;
  cfg.n_imu = data.train.front().data.dim(0);
  cfg.n_classes = n_classes;
  cfg.d_out = config.d_out;
  cfg.r = config.r;
  cfg.eta = config.eta;

  Rng rng(config.seed);
  ModelParams params = ModelParams::init(cfg, rng);
  auto named = params.named_tensors();
  std::vector<Tensor*> param_ptrs;
  for (auto& [name, tensor] : named) param_ptrs.push_back(tensor);
  Adam adam;
  const auto config_hash = sha256(config.canonical());

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.metrics_path = (std::filesystem::path(out_dir) / "metrics.csv").string();
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw DataError("cannot open metrics log: " + result.metrics_path);
  metrics.precision(12);
  metrics << "epoch,train_loss,val_loss,val_acc,lr\n";

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<detail::RetainedCheckpoint> retained;
  const int threads = config.effective_threads();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.initial_lr * std::pow(config.lr_decay, epoch);
    rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::size_t count = stop - start;
      const int batch_id = static_cast<int>(start / config.batch_size);

      std::vector<detail::BatchChunk> chunks;
      try {
        const std::size_t n_chunks =
            std::min<std::size_t>(count, static_cast<std::size_t>(threads));
        chunks.resize(n_chunks);
        if (n_chunks == 1) {
          chunks[0] = detail::batch_chunk(params, cfg, data.train, order, start, stop);
        } else {
          std::vector<std::thread> pool;
          std::vector<std::exception_ptr> failures(n_chunks);
          for (std::size_t c = 0; c < n_chunks; ++c) {
            const std::size_t lo = start + c * count / n_chunks;
            const std::size_t hi = start + (c + 1) * count / n_chunks;
            pool.emplace_back([&, c, lo, hi] {
              try {
                chunks[c] = detail::batch_chunk(params, cfg, data.train, order, lo, hi);
              } catch (...) {
                failures[c] = std::current_exception();
              }
            });
          }
          for (auto& th : pool) th.join();
          for (const auto& failure : failures)
            if (failure) std::rethrow_exception(failure);
        }
      } catch (const NumericError& err) {
        throw NumericError("aborting: epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_id) + ": " + err.what());
      }

      std::vector<Tensor> grads;
      for (std::size_t p = 0; p < param_ptrs.size(); ++p) grads.emplace_back(param_ptrs[p]->shape);
      std::size_t sample = start;
      for (const auto& chunk : chunks) {
        loss_sum += chunk.loss_sum;
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t k = 0; k < grads[p].data.size(); ++k)
            grads[p].data[k] += chunk.grads[p].data[k];
        for (const int pred : chunk.predictions)
          if (pred == data.train[order[sample++]].label) ++correct;
      }
      const float inv = 1.0f / static_cast<float>(count);
      for (auto& g : grads)
        for (auto& v : g.data) v *= inv;
      adam.step(param_ptrs, grads, static_cast<float>(lr));
    }

    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double running_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    const auto val = infer_windows(params, cfg, data.validation);

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = train_loss;
    stats.val_loss = val.mean_loss;
    stats.val_acc = val.accuracy;
    stats.lr = lr;
    result.history.push_back(stats);
    metrics << epoch << ',' << train_loss << ',' << val.mean_loss << ',' << val.accuracy << ','
            << lr << '\n';
    metrics.flush();

    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = params;
    ckpt.epoch = epoch;
    ckpt.val_loss = static_cast<float>(val.mean_loss);
    ckpt.rng_state = rng.state();
    ckpt.config_hash = config_hash;
    const auto path = (std::filesystem::path(out_dir) / detail::checkpoint_name(epoch)).string();
    save_checkpoint(path, ckpt);
    retained.push_back({val.mean_loss, epoch, path});
    std::sort(retained.begin(), retained.end(), [](const auto& a, const auto& b) {
      return a.val_loss != b.val_loss ? a.val_loss < b.val_loss : a.epoch < b.epoch;
    });
    while (retained.size() > static_cast<std::size_t>(config.ensemble_k)) {
      std::filesystem::remove(retained.back().path);
      retained.pop_back();
    }

    result.final_epoch = epoch;
    if (config.target_train_acc > 0.0f && running_acc >= config.target_train_acc) {
      // The running count mixes parameters from different steps; confirm
      // against the end-of-epoch parameters before stopping.
      const auto confirm = infer_windows(params, cfg, data.train);
      if (confirm.accuracy >= config.target_train_acc) {
        result.reached_target = true;
        break;
      }
    }
  }

  for (const auto& r : retained) result.checkpoints.push_back(r.path);
  return result;
}

// The vote rule: class scores are summed across the models, then argmax
// (lowest index wins ties). Deliberately not a majority over per-model
// argmaxes; a confident minority model can outvote two lukewarm ones.
inline int sum_vote(const std::vector<std::vector<float>>& per_model_scores) {
  if (per_model_scores.empty()) throw ConfigError("sum_vote needs at least one score set");
  const std::size_t n_classes = per_model_scores.front().size();
  std::vector<double> total(n_classes, 0.0);
  for (const auto& scores : per_model_scores) {
    if (scores.size() != n_classes) throw ShapeError("sum_vote score sets disagree on length");
    for (std::size_t k = 0; k < n_classes; ++k) total[k] += scores[k];
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < n_classes; ++k)
    if (total[k] > total[best]) best = k;
  return static_cast<int>(best);
}

// Horizontal vote across checkpoints of one training run.
inline std::vector<int> ensemble_vote(const std::vector<Checkpoint>& checkpoints,
                                      const std::vector<ImuWindow>& batch) {
  if (checkpoints.empty()) throw ConfigError("ensemble_vote needs at least one checkpoint");
  const auto& first = checkpoints.front().config;
  for (const auto& c : checkpoints) {
    if (c.config.n_imu != first.n_imu || c.config.n_classes != first.n_classes ||
        c.config.d_out != first.d_out)
      throw ShapeError("ensemble checkpoints disagree on model shape");
  }
  std::vector<int> predictions;
  predictions.reserve(batch.size());
  for (const auto& w : batch) {
    std::vector<std::vector<float>> scores;
    scores.reserve(checkpoints.size());
    for (const auto& c : checkpoints) scores.push_back(model_scores(c.params, c.config, w.data));
    predictions.push_back(sum_vote(scores));
  }
  return predictions;
}

}  // namespace arcnet
