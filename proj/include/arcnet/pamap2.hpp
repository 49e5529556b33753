#pragma once

#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "arcnet/dataset.hpp"
#include "arcnet/errors.hpp"

namespace arcnet {

// PAMAP2 protocol recordings: space-separated text, one 54-column row per
// 100 Hz sample. Column 0 is the timestamp, column 1 the activity id,
// column 2 the heart rate, then three 17-column IMU blocks (hand, chest,
// ankle). Within a block: temperature, +-16g accel triple, +-6g accel
// triple, gyro triple, magnetometer triple, four orientation values. Only
// the +-16g accelerometer and the gyroscope are used here; the +-6g unit
// saturates during dynamic activities.

inline constexpr int kPamap2Columns = 54;
inline constexpr int kPamap2Imus = 3;
inline constexpr int kPamap2RawRate = 100;
// Longest NaN run that is repaired by interpolation: 0.5 s at 100 Hz.
inline constexpr int kPamap2MaxNanRun = 50;
inline constexpr int kPamap2ValidationSubject = 5;
inline constexpr int kPamap2TestSubject = 1;

// The 12 protocol activities, in label order.
inline const std::vector<std::pair<int, const char*>>& pamap2_protocol() {
  static const std::vector<std::pair<int, const char*>> table = {
      {1, "lying"},           {2, "sitting"},          {3, "standing"},
      {4, "walking"},         {5, "running"},          {6, "cycling"},
      {7, "Nordic walking"},  {12, "ascending stairs"}, {13, "descending stairs"},
      {16, "vacuum cleaning"}, {17, "ironing"},         {24, "rope jumping"}};
  return table;
}

inline std::vector<std::string> pamap2_class_names() {
  std::vector<std::string> names;
  for (const auto& [id, name] : pamap2_protocol()) names.emplace_back(name);
  return names;
}

// Class index for an activity id, -1 for anything outside the protocol set
// (including the transient id 0).
inline int pamap2_class_index(int activity_id) {
  const auto& table = pamap2_protocol();
  for (std::size_t i = 0; i < table.size(); ++i)
    if (table[i].first == activity_id) return static_cast<int>(i);
  return -1;
}

namespace detail {

// 18 raw channel values of one row: per IMU the +-16g accel and gyro
// triples, possibly NaN where the wireless link dropped.
struct Pamap2Row {
  int class_index = -1;
  std::array<double, 18> values{};
};

inline Pamap2Row parse_pamap2_row(const std::string& line, const std::string& path,
                                  std::size_t line_no) {
  std::array<double, kPamap2Columns> cols{};
  const char* p = line.c_str();
  int count = 0;
  while (true) {
    while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
    if (*p == '\0') break;
    char* end = nullptr;
    const double v = std::strtod(p, &end);
    if (end == p)
      throw DataError(path + " line " + std::to_string(line_no) + ": malformed number");
    if (count >= kPamap2Columns) {
      ++count;
      break;
    }
    cols[static_cast<std::size_t>(count++)] = v;
    p = end;
  }
  if (count != kPamap2Columns)
    throw DataError(path + " line " + std::to_string(line_no) + ": expected " +
                    std::to_string(kPamap2Columns) + " columns, got " + std::to_string(count));

  Pamap2Row row;
  const double activity = cols[1];
  row.class_index =
      std::isfinite(activity) ? pamap2_class_index(static_cast<int>(activity)) : -1;
  for (int imu = 0; imu < kPamap2Imus; ++imu) {
    const int base = 3 + 17 * imu;
    for (int a = 0; a < 3; ++a)
      row.values[static_cast<std::size_t>(imu * 6 + a)] = cols[static_cast<std::size_t>(base + 1 + a)];
    for (int g = 0; g < 3; ++g)
      row.values[static_cast<std::size_t>(imu * 6 + 3 + g)] =
          cols[static_cast<std::size_t>(base + 7 + g)];
  }
  return row;
}

// Repairs NaN runs of at most kPamap2MaxNanRun samples by linear
// interpolation between the bounding values. Longer runs and runs touching
// either end of the slice cannot be repaired; their positions are reported
// so the caller can split the segment there.
inline void repair_channel(std::vector<double>& ch, std::vector<char>& bad) {
  const std::size_t n = ch.size();
  std::size_t t = 0;
  while (t < n) {
    if (!std::isnan(ch[t])) {
      ++t;
      continue;
    }
    std::size_t end = t;
    while (end < n && std::isnan(ch[end])) ++end;
    const std::size_t run = end - t;
    const bool bounded = t > 0 && end < n;
    if (bounded && run <= static_cast<std::size_t>(kPamap2MaxNanRun)) {
      const double lo = ch[t - 1];
      const double hi = ch[end];
      for (std::size_t k = 0; k < run; ++k)
        ch[t + k] = lo + (hi - lo) * static_cast<double>(k + 1) / static_cast<double>(run + 1);
    } else {
      for (std::size_t k = t; k < end; ++k) bad[k] = 1;
    }
    t = end;
  }
}

}  // namespace detail

// Parses one subject file into a 100 Hz labeled stream. Activity boundaries
// and unrepairable sample drops become segment breaks.
inline LabeledStream parse_pamap2_file(const std::string& path, int subject) {
  std::ifstream is(path);
  if (!is) throw DataError("missing PAMAP2 subject file: " + path);

  std::vector<detail::Pamap2Row> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    rows.push_back(detail::parse_pamap2_row(line, path, line_no));
  }

  LabeledStream out;
  out.subject = subject;
  out.n_imu = kPamap2Imus;
  out.rate_hz = kPamap2RawRate;
  out.channels.resize(18);

  int next_segment = 0;
  std::size_t begin = 0;
  while (begin < rows.size()) {
    if (rows[begin].class_index < 0) {
      ++begin;
      continue;
    }
    std::size_t end = begin + 1;
    while (end < rows.size() && rows[end].class_index == rows[begin].class_index) ++end;
    const std::size_t run = end - begin;

    std::vector<char> bad(run, 0);
    std::array<std::vector<double>, 18> repaired;
    for (std::size_t c = 0; c < 18; ++c) {
      repaired[c].resize(run);
      for (std::size_t k = 0; k < run; ++k) repaired[c][k] = rows[begin + k].values[c];
      detail::repair_channel(repaired[c], bad);
    }

    // Emit the clean stretches between unrepairable positions.
    std::size_t k = 0;
    while (k < run) {
      if (bad[k]) {
        ++k;
        continue;
      }
      std::size_t stop = k;
      while (stop < run && !bad[stop]) ++stop;
      const int seg = next_segment++;
      for (std::size_t j = k; j < stop; ++j) {
        for (std::size_t c = 0; c < 18; ++c)
          out.channels[c].push_back(static_cast<float>(repaired[c][j]));
        out.labels.push_back(rows[begin].class_index);
        out.segments.push_back(seg);
      }
      k = stop;
    }
    begin = end;
  }
  return out;
}

// Parses the nine protocol subjects (subject101.dat .. subject109.dat);
// subjects are numbered 1..9 in the result.
inline std::vector<LabeledStream> parse_pamap2(const std::string& raw_dir) {
  std::vector<LabeledStream> streams;
  for (int s = 1; s <= 9; ++s) {
    const std::string path = raw_dir + "/subject10" + std::to_string(s) + ".dat";
    streams.push_back(parse_pamap2_file(path, s));
  }
  return streams;
}

}  // namespace arcnet
