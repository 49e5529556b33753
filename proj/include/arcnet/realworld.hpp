#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "arcnet/dataset.hpp"
#include "arcnet/errors.hpp"

namespace arcnet {

// RealWorld (HAR) recordings: one CSV per subject, activity, body position
// and sensor, sampled at nominally 50 Hz with device timestamps in
// milliseconds. Expected layout under the raw directory:
//   proband<N>/acc_<activity>_<position>.csv
//   proband<N>/gyr_<activity>_<position>.csv
// with header id,attr_time,attr_x,attr_y,attr_z.

inline constexpr int kRealWorldRate = 50;
inline constexpr double kRealWorldStepMs = 20.0;
inline constexpr int kRealWorldImus = 7;
inline constexpr int kRealWorldValidationSubject = 10;
inline constexpr int kRealWorldTestSubject = 11;

inline const std::vector<std::string>& realworld_positions() {
  static const std::vector<std::string> positions = {"chest", "forearm", "head",    "shin",
                                                     "thigh", "upperarm", "waist"};
  return positions;
}

inline std::vector<std::string> realworld_class_names() {
  return {"climbingdown", "climbingup", "jumping",  "lying",
          "running",      "sitting",    "standing", "walking"};
}

// One sensor file: timestamps (ms) with xyz readings, sorted by time.
struct TimedSeries {
  std::vector<double> t_ms;
  std::vector<std::array<float, 3>> xyz;
};

inline TimedSeries parse_realworld_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing RealWorld file: " + path);

  std::string line;
  if (!std::getline(is, line) || line.rfind("id,", 0) != 0)
    throw DataError(path + ": missing id,attr_time,... header");

  TimedSeries series;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const char* p = line.c_str();
    double fields[5];
    for (int f = 0; f < 5; ++f) {
      char* end = nullptr;
      fields[f] = std::strtod(p, &end);
      if (end == p)
        throw DataError(path + " line " + std::to_string(line_no) + ": malformed number");
      p = end;
      if (f < 4) {
        if (*p != ',')
          throw DataError(path + " line " + std::to_string(line_no) + ": expected 5 fields");
        ++p;
      }
    }
    if (*p != '\0' && *p != '\r')
      throw DataError(path + " line " + std::to_string(line_no) + ": expected 5 fields");
    series.t_ms.push_back(fields[1]);
    series.xyz.push_back({static_cast<float>(fields[2]), static_cast<float>(fields[3]),
                          static_cast<float>(fields[4])});
  }

  // Device clocks occasionally deliver out-of-order rows; alignment needs
  // monotone time.
  std::vector<std::size_t> order(series.t_ms.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return series.t_ms[a] < series.t_ms[b]; });
  TimedSeries sorted;
  sorted.t_ms.reserve(order.size());
  sorted.xyz.reserve(order.size());
  for (const std::size_t i : order) {
    sorted.t_ms.push_back(series.t_ms[i]);
    sorted.xyz.push_back(series.xyz[i]);
  }
  return sorted;
}

// Several series resampled onto one uniform grid, three channel rows per
// series. The grid starts at the latest common start, steps by step_ms, and
// ends at the earliest common end; each grid point takes the nearest sample
// of each series. Disjoint time ranges produce an empty block.
struct AlignedBlock {
  std::size_t length = 0;
  std::vector<std::vector<float>> channels;
};

inline AlignedBlock align_nearest(const std::vector<TimedSeries>& series, double step_ms) {
  if (!(step_ms > 0)) throw ConfigError("align: step must be positive");
  AlignedBlock block;
  block.channels.resize(series.size() * 3);
  if (series.empty()) return block;

  double start = -std::numeric_limits<double>::infinity();
  double end = std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    if (s.t_ms.empty()) return block;
    start = std::max(start, s.t_ms.front());
    end = std::min(end, s.t_ms.back());
  }
  if (start > end) return block;

  block.length = static_cast<std::size_t>(std::floor((end - start) / step_ms)) + 1;
  for (auto& ch : block.channels) ch.reserve(block.length);

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    std::size_t idx = 0;
    for (std::size_t k = 0; k < block.length; ++k) {
      const double target = start + step_ms * static_cast<double>(k);
      while (idx + 1 < s.t_ms.size() &&
             std::abs(s.t_ms[idx + 1] - target) < std::abs(s.t_ms[idx] - target))
        ++idx;
      for (int a = 0; a < 3; ++a) block.channels[si * 3 + a].push_back(s.xyz[idx][a]);
    }
  }
  return block;
}

// Parses one subject directory into a 50 Hz labeled stream over the seven
// positions (42 channels). An activity missing any of its 14 files, or with
// no overlapping time range, is skipped with a warning record.
inline LabeledStream parse_realworld_subject(const std::string& dir, int subject,
                                             std::vector<std::string>* warnings = nullptr) {
  const auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  LabeledStream out;
  out.subject = subject;
  out.n_imu = kRealWorldImus;
  out.rate_hz = kRealWorldRate;
  out.channels.resize(static_cast<std::size_t>(kRealWorldImus) * kImuRows);

  const auto class_names = realworld_class_names();
  int next_segment = 0;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    const std::string& activity = class_names[c];

    std::vector<std::string> paths;
    for (const auto& pos : realworld_positions())
      for (const char* sensor : {"acc", "gyr"})
        paths.push_back(dir + "/" + sensor + "_" + activity + "_" + pos + ".csv");
    const auto missing =
        std::find_if_not(paths.begin(), paths.end(),
                         [](const std::string& p) { return std::filesystem::exists(p); });
    if (missing != paths.end()) {
      warn("proband" + std::to_string(subject) + ": " + activity + " skipped, missing " +
           *missing);
      continue;
    }

    // Interleaved acc/gyr per position, so the aligned rows land directly in
    // stream order: position p occupies channels p*6 .. p*6+5.
    std::vector<TimedSeries> series;
    for (const auto& pos : realworld_positions()) {
      series.push_back(parse_realworld_csv(dir + "/acc_" + activity + "_" + pos + ".csv"));
      series.push_back(parse_realworld_csv(dir + "/gyr_" + activity + "_" + pos + ".csv"));
    }
    const auto block = align_nearest(series, kRealWorldStepMs);
    if (block.length == 0) {
      warn("proband" + std::to_string(subject) + ": " + activity +
           " skipped, no overlapping samples");
      continue;
    }

    const int seg = next_segment++;
    for (std::size_t ch = 0; ch < block.channels.size(); ++ch)
      out.channels[ch].insert(out.channels[ch].end(), block.channels[ch].begin(),
                              block.channels[ch].end());
    for (std::size_t k = 0; k < block.length; ++k) {
      out.labels.push_back(static_cast<int>(c));
      out.segments.push_back(seg);
    }
  }
  return out;
}

// Parses every proband<N> directory under the raw directory, ordered by
// subject number.
inline std::vector<LabeledStream> parse_realworld(const std::string& raw_dir,
                                                  std::vector<std::string>* warnings = nullptr) {
  std::vector<std::pair<int, std::string>> subjects;
  if (!std::filesystem::is_directory(raw_dir))
    throw DataError("not a directory: " + raw_dir);
  for (const auto& entry : std::filesystem::directory_iterator(raw_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind("proband", 0) != 0) continue;
    const std::string digits = name.substr(7);
    if (digits.empty() ||
        digits.find_first_not_of("0123456789") != std::string::npos)
      continue;
    subjects.emplace_back(std::atoi(digits.c_str()), entry.path().string());
  }
  if (subjects.empty()) throw DataError("no proband directories in " + raw_dir);
  std::sort(subjects.begin(), subjects.end());

  std::vector<LabeledStream> streams;
  for (const auto& [subject, path] : subjects)
    streams.push_back(parse_realworld_subject(path, subject, warnings));
  return streams;
}

}  // namespace arcnet
