#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/errors.hpp"
#include "arcnet/rng.hpp"
#include "arcnet/serial.hpp"
#include "arcnet/tensor.hpp"
#include "arcnet/window.hpp"

namespace arcnet {

// One training sample: per-IMU stacked measurements plus its class label and
// the subject the recording came from.
struct ImuWindow {
  Tensor data;      // [n_imu, 6, 128]
  int label = 0;    // class index
  int subject = 0;  // subject id
};

// Per-channel normalization statistics, indexed imu * 6 + row.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

// Leave-one-subject-out split with train-derived normalization applied to
// every part. The subject sets of the three parts are pairwise disjoint.
struct DatasetSplit {
  std::vector<ImuWindow> train;
  std::vector<ImuWindow> validation;
  std::vector<ImuWindow> test;
  std::vector<std::string> class_names;
  ChannelStats channel_stats;
};

// A subject's recording as parallel channel rows: channels[imu*6+row][t].
// labels[t] is the class index; segments[t] changes whenever continuity
// breaks (activity change, dropped samples, separate recordings), and
// windows never straddle such a break.
struct LabeledStream {
  int subject = 0;
  int n_imu = 0;
  int rate_hz = 50;
  std::vector<std::vector<float>> channels;
  std::vector<int> labels;
  std::vector<int> segments;

  std::size_t length() const { return labels.size(); }

  void check() const {
    if (n_imu < 1) throw DataError("stream: n_imu must be >= 1");
    if (channels.size() != static_cast<std::size_t>(n_imu) * kImuRows)
      throw DataError("stream: expected " + std::to_string(n_imu * kImuRows) +
                      " channel rows, got " + std::to_string(channels.size()));
    for (const auto& ch : channels)
      if (ch.size() != labels.size())
        throw DataError("stream: channel length " + std::to_string(ch.size()) +
                        " vs " + std::to_string(labels.size()) + " labels");
    if (segments.size() != labels.size())
      throw DataError("stream: segment markers do not cover the stream");
  }
};

// Keep every second sample. Runs per segment so a break never aliases into
// the kept sequence.
inline LabeledStream resample_decimate(const LabeledStream& in) {
  in.check();
  if (in.rate_hz % 2 != 0)
    throw DataError("resample_decimate: unsupported rate " + std::to_string(in.rate_hz) +
                    " Hz, need an even input rate");
  LabeledStream out;
  out.subject = in.subject;
  out.n_imu = in.n_imu;
  out.rate_hz = in.rate_hz / 2;
  out.channels.resize(in.channels.size());

  std::size_t seg_start = 0;
  for (std::size_t t = 0; t < in.length(); ++t) {
    if (in.segments[t] != in.segments[seg_start]) seg_start = t;
    if ((t - seg_start) % 2 != 0) continue;
    for (std::size_t c = 0; c < in.channels.size(); ++c)
      out.channels[c].push_back(in.channels[c][t]);
    out.labels.push_back(in.labels[t]);
    out.segments.push_back(in.segments[t]);
  }
  return out;
}

// Windowing skip accounting: segments shorter than one window are not an
// error, they just produce nothing.
struct WindowingReport {
  std::size_t windows = 0;
  std::size_t skipped_segments = 0;
};

// Slices a stream into 128-sample windows with stride 51. Windows stay
// inside one (label, segment) run, so no window spans two activities or a
// continuity break. Runs of length T yield floor((T - 128) / 51) + 1
// windows.
inline std::vector<ImuWindow> make_windows(const LabeledStream& s,
                                           WindowingReport* report = nullptr) {
  s.check();
  std::vector<ImuWindow> out;
  const std::size_t total = s.length();
  std::size_t begin = 0;
  while (begin < total) {
    std::size_t end = begin + 1;
    while (end < total && s.labels[end] == s.labels[begin] &&
           s.segments[end] == s.segments[begin])
      ++end;
    const std::size_t run = end - begin;
    if (run < static_cast<std::size_t>(kWindowLen)) {
      if (report) ++report->skipped_segments;
    } else {
      const std::size_t count = (run - kWindowLen) / kWindowStride + 1;
      for (std::size_t w = 0; w < count; ++w) {
        const std::size_t start = begin + w * kWindowStride;
        ImuWindow win;
        win.label = s.labels[begin];
        win.subject = s.subject;
        win.data = Tensor({s.n_imu, kImuRows, kWindowLen});
        for (int imu = 0; imu < s.n_imu; ++imu)
          for (int row = 0; row < kImuRows; ++row) {
            const auto& ch = s.channels[static_cast<std::size_t>(imu) * kImuRows + row];
            for (int t = 0; t < kWindowLen; ++t) win.data(imu, row, t) = ch[start + t];
          }
        if (!win.data.all_finite())
          throw DataError("make_windows: non-finite sample in subject " +
                          std::to_string(s.subject) + " at offset " + std::to_string(start));
        out.push_back(std::move(win));
        if (report) ++report->windows;
      }
    }
    begin = end;
  }
  return out;
}

namespace detail {

inline void check_windows(const std::vector<ImuWindow>& windows, int n_classes) {
  if (windows.empty()) throw DataError("dataset: no windows");
  const Shape& shape = windows.front().data.shape;
  if (shape.size() != 3 || shape[1] != kImuRows || shape[2] != kWindowLen)
    throw DataError("dataset: bad window shape " + shape_str(shape));
  for (const auto& w : windows) {
    if (w.data.shape != shape)
      throw DataError("dataset: mixed window shapes " + shape_str(shape) + " vs " +
                      shape_str(w.data.shape));
    if (w.label < 0 || w.label >= n_classes)
      throw DataError("dataset: label " + std::to_string(w.label) + " out of range for " +
                      std::to_string(n_classes) + " classes");
    if (w.subject < 0 || w.subject > 0xffff)
      throw DataError("dataset: subject " + std::to_string(w.subject) +
                      " does not fit the container format");
  }
}

}  // namespace detail

// Leave-one-subject-out split. Normalization statistics (per-channel mean
// and population standard deviation) come from the train part only and are
// applied to all three parts; near-constant channels fall back to stddev 1.
inline DatasetSplit split_subjects(const std::vector<ImuWindow>& windows,
                                   std::vector<std::string> class_names,
                                   int validation_subject, int test_subject) {
  if (validation_subject == test_subject)
    throw ConfigError("split: validation and test subject must differ");
  detail::check_windows(windows, static_cast<int>(class_names.size()));

  DatasetSplit split;
  split.class_names = std::move(class_names);
  bool saw_val = false, saw_test = false;
  for (const auto& w : windows) {
    if (w.subject == validation_subject) {
      split.validation.push_back(w);
      saw_val = true;
    } else if (w.subject == test_subject) {
      split.test.push_back(w);
      saw_test = true;
    } else {
      split.train.push_back(w);
    }
  }
  if (!saw_val)
    throw DataError("split: validation subject " + std::to_string(validation_subject) +
                    " has no windows");
  if (!saw_test)
    throw DataError("split: test subject " + std::to_string(test_subject) + " has no windows");
  if (split.train.empty()) throw DataError("split: no training subjects left");

  const int n_imu = split.train.front().data.dim(0);
  const std::size_t n_channels = static_cast<std::size_t>(n_imu) * kImuRows;
  std::vector<double> sum(n_channels, 0.0), sumsq(n_channels, 0.0);
  const double count = static_cast<double>(split.train.size()) * kWindowLen;
  for (const auto& w : split.train)
    for (int imu = 0; imu < n_imu; ++imu)
      for (int row = 0; row < kImuRows; ++row) {
        const std::size_t c = static_cast<std::size_t>(imu) * kImuRows + row;
        for (int t = 0; t < kWindowLen; ++t) {
          const double v = w.data(imu, row, t);
          sum[c] += v;
          sumsq[c] += v * v;
        }
      }

  split.channel_stats.mean.resize(n_channels);
  split.channel_stats.stddev.resize(n_channels);
  for (std::size_t c = 0; c < n_channels; ++c) {
    const double mean = sum[c] / count;
    const double var = std::max(0.0, sumsq[c] / count - mean * mean);
    double sd = std::sqrt(var);
    if (sd < 1e-8) sd = 1.0;
    split.channel_stats.mean[c] = static_cast<float>(mean);
    split.channel_stats.stddev[c] = static_cast<float>(sd);
  }

  const auto normalize = [&](std::vector<ImuWindow>& part) {
    for (auto& w : part)
      for (int imu = 0; imu < n_imu; ++imu)
        for (int row = 0; row < kImuRows; ++row) {
          const std::size_t c = static_cast<std::size_t>(imu) * kImuRows + row;
          const float mu = split.channel_stats.mean[c];
          const float sd = split.channel_stats.stddev[c];
          for (int t = 0; t < kWindowLen; ++t) w.data(imu, row, t) = (w.data(imu, row, t) - mu) / sd;
        }
  };
  normalize(split.train);
  normalize(split.validation);
  normalize(split.test);
  return split;
}

// ---------------------------------------------------------------------------
// Container file. Windows are stored raw (pre-normalization) so that
// splitting and normalization stay reproducible functions of the container
// content. Layout, all little-endian:
//   magic "ARCD", version u32, n_imu u32, n_classes u32,
//   per class: name length u16 + UTF-8 bytes,
//   window count u64,
//   per window: subject u16, label u16, n_imu*6*128 f32 row-major.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kArcdVersion = 1;

struct ArcdFile {
  int n_imu = 0;
  std::vector<std::string> class_names;
  std::vector<ImuWindow> windows;
};

inline void save_arcd(const std::string& path, int n_imu,
                      const std::vector<std::string>& class_names,
                      const std::vector<ImuWindow>& windows) {
  detail::check_windows(windows, static_cast<int>(class_names.size()));
  if (windows.front().data.dim(0) != n_imu)
    throw DataError("save: windows carry " + std::to_string(windows.front().data.dim(0)) +
                    " IMUs, expected " + std::to_string(n_imu));

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write dataset file " + path);
  os.write("ARCD", 4);
  detail::put_u32(os, kArcdVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(n_imu));
  detail::put_u32(os, static_cast<std::uint32_t>(class_names.size()));
  for (const auto& name : class_names) {
    if (name.size() > 0xffff) throw DataError("save: class name too long");
    detail::put_u16(os, static_cast<std::uint16_t>(name.size()));
    detail::put_bytes(os, name.data(), name.size());
  }
  detail::put_u64(os, windows.size());
  for (const auto& w : windows) {
    detail::put_u16(os, static_cast<std::uint16_t>(w.subject));
    detail::put_u16(os, static_cast<std::uint16_t>(w.label));
    for (const float v : w.data.data) detail::put_f32(os, v);
  }
  if (!os) throw DataError("write failed for dataset file " + path);
}

inline ArcdFile load_arcd(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open dataset file " + path);
  char magic[4];
  detail::take_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "ARCD") throw DataError("not a dataset container: " + path);
  const auto version = detail::take_u32(is, "version");
  if (version != kArcdVersion)
    throw DataError("unsupported container version " + std::to_string(version));

  ArcdFile file;
  file.n_imu = static_cast<int>(detail::take_u32(is, "n_imu"));
  if (file.n_imu < 1 || file.n_imu > 64)
    throw DataError("implausible IMU count " + std::to_string(file.n_imu));
  const auto n_classes = detail::take_u32(is, "n_classes");
  if (n_classes < 1 || n_classes > 0xffff)
    throw DataError("implausible class count " + std::to_string(n_classes));
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    const auto len = detail::take_u16(is, "class name length");
    std::string name(len, '\0');
    if (len) detail::take_bytes(is, name.data(), len, "class name");
    file.class_names.push_back(std::move(name));
  }

  const auto count = detail::take_u64(is, "window count");
  const std::size_t values = static_cast<std::size_t>(file.n_imu) * kImuRows * kWindowLen;
  file.windows.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    ImuWindow w;
    w.subject = detail::take_u16(is, "window subject");
    w.label = detail::take_u16(is, "window label");
    if (w.label >= static_cast<int>(n_classes))
      throw DataError("window " + std::to_string(i) + ": label " + std::to_string(w.label) +
                      " out of range");
    w.data = Tensor({file.n_imu, kImuRows, kWindowLen});
    for (std::size_t v = 0; v < values; ++v) w.data.data[v] = detail::take_f32(is, "window data");
    if (!w.data.all_finite())
      throw DataError("window " + std::to_string(i) + ": non-finite sample values");
    file.windows.push_back(std::move(w));
  }
  return file;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale data: class-conditioned sinusoids plus noise.
// Generation is a pure function of its SyntheticSpec, so identical settings
// produce byte-identical windows.
// ---------------------------------------------------------------------------

// Per-class channel signature. Entry c of each vector applies to channel
// imu*6+row modulo the vector length, so a single entry broadcasts.
struct ClassSignature {
  std::vector<float> freq_hz;
  std::vector<float> amplitude;
};

struct SyntheticSpec {
  int n_imu = 2;
  int n_classes = 4;
  int windows_per_class = 50;
  std::uint64_t seed = 1;
  float noise = 0.05f;
  std::vector<ClassSignature> signatures;  // one per class

  // Disjoint frequencies spaced well below the 25 Hz Nyquist limit, with a
  // mild amplitude ramp across the six sensor rows.
  static SyntheticSpec defaults(int n_imu, int n_classes, int windows_per_class,
                                std::uint64_t seed) {
    if (n_imu < 1 || n_classes < 2 || windows_per_class < 1)
      throw ConfigError("synthetic spec: need n_imu >= 1, n_classes >= 2, windows >= 1");
    if (n_classes > 12) throw ConfigError("synthetic spec: at most 12 default classes");
    SyntheticSpec spec;
    spec.n_imu = n_imu;
    spec.n_classes = n_classes;
    spec.windows_per_class = windows_per_class;
    spec.seed = seed;
    for (int c = 0; c < n_classes; ++c) {
      ClassSignature sig;
      const float base = 1.5f + 1.5f * static_cast<float>(c);
      for (int row = 0; row < kImuRows; ++row) {
        sig.freq_hz.push_back(base);
        sig.amplitude.push_back(1.0f + 0.1f * static_cast<float>(row));
      }
      spec.signatures.push_back(std::move(sig));
    }
    return spec;
  }
};

inline std::vector<std::string> synth_class_names(int n_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < n_classes; ++c) names.push_back("class" + std::to_string(c));
  return names;
}

// Raw synthetic windows, subjects assigned round-robin over 0..9 within each
// class so every subject sees every class once windows_per_class >= 10.
inline std::vector<ImuWindow> synth_windows(const SyntheticSpec& spec) {
  if (spec.signatures.size() != static_cast<std::size_t>(spec.n_classes))
    throw ConfigError("synthetic spec: " + std::to_string(spec.signatures.size()) +
                      " signatures for " + std::to_string(spec.n_classes) + " classes");
  if (spec.n_imu < 1) throw ConfigError("synthetic spec: n_imu must be >= 1");

  constexpr double kTwoPi = 6.283185307179586;
  Rng rng(spec.seed);
  std::vector<ImuWindow> out;
  out.reserve(static_cast<std::size_t>(spec.n_classes) * spec.windows_per_class);
  for (int c = 0; c < spec.n_classes; ++c) {
    const ClassSignature& sig = spec.signatures[static_cast<std::size_t>(c)];
    if (sig.freq_hz.empty() || sig.amplitude.empty())
      throw ConfigError("synthetic spec: empty signature for class " + std::to_string(c));
    for (int i = 0; i < spec.windows_per_class; ++i) {
      ImuWindow w;
      w.label = c;
      w.subject = i % 10;
      w.data = Tensor({spec.n_imu, kImuRows, kWindowLen});
      for (int imu = 0; imu < spec.n_imu; ++imu)
        for (int row = 0; row < kImuRows; ++row) {
          const std::size_t ch = static_cast<std::size_t>(imu) * kImuRows + row;
          const double freq = sig.freq_hz[ch % sig.freq_hz.size()];
          const double amp = sig.amplitude[ch % sig.amplitude.size()];
          const double phase = rng.uniform(0.0, kTwoPi);
          for (int t = 0; t < kWindowLen; ++t) {
            const double x = amp * std::sin(kTwoPi * freq * t / 50.0 + phase) +
                             spec.noise * rng.gauss();
            w.data(imu, row, t) = static_cast<float>(x);
          }
        }
      out.push_back(std::move(w));
    }
  }
  return out;
}

// Synthetic split: subjects 8 and 9 of the round-robin become validation and
// test, mirroring the leave-subject-out protocol of the real datasets.
inline DatasetSplit synth_generate(const SyntheticSpec& spec) {
  return split_subjects(synth_windows(spec), synth_class_names(spec.n_classes), 8, 9);
}

}  // namespace arcnet
