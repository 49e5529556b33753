#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arcnet/errors.hpp"

namespace arcnet {

// Confusion matrix plus the usual weighted scores. Rows are true labels,
// columns are predictions.
struct EvalReport {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::int64_t>> confusion;  // [C][C]
  double accuracy = 0;
  double weighted_precision = 0;
  double weighted_recall = 0;
  double weighted_f1 = 0;
  std::int64_t samples = 0;
};

namespace detail {

struct PerClassCounts {
  std::vector<std::int64_t> support, predicted, correct;
};

inline PerClassCounts class_counts(const std::vector<std::vector<std::int64_t>>& confusion) {
  const std::size_t c = confusion.size();
  PerClassCounts k{std::vector<std::int64_t>(c, 0), std::vector<std::int64_t>(c, 0),
                   std::vector<std::int64_t>(c, 0)};
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      k.support[i] += confusion[i][j];
      k.predicted[j] += confusion[i][j];
      if (i == j) k.correct[i] = confusion[i][j];
    }
  return k;
}

}  // namespace detail

// Builds the report from parallel prediction/label lists. Classes with zero
// support or zero precision+recall contribute 0 to the weighted scores.
inline EvalReport classification_report(const std::vector<int>& predictions,
                                        const std::vector<int>& labels, int n_classes,
                                        std::vector<std::string> class_names = {}) {
  if (predictions.size() != labels.size())
    throw DataError("classification_report: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw DataError("classification_report: no samples");

  EvalReport rep;
  rep.class_names = std::move(class_names);
  if (rep.class_names.empty())
    for (int c = 0; c < n_classes; ++c) rep.class_names.push_back("class" + std::to_string(c));
  rep.confusion.assign(static_cast<std::size_t>(n_classes),
                       std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0));

  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= n_classes)
      throw DataError("classification_report: label " + std::to_string(y) + " out of range");
    if (p < 0 || p >= n_classes)
      throw DataError("classification_report: prediction " + std::to_string(p) + " out of range");
    ++rep.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)];
    if (y == p) ++hits;
  }
  rep.samples = static_cast<std::int64_t>(labels.size());
  rep.accuracy = static_cast<double>(hits) / static_cast<double>(rep.samples);

  const auto k = detail::class_counts(rep.confusion);
  const double n = static_cast<double>(rep.samples);
  for (int c = 0; c < n_classes; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (k.support[ci] == 0) continue;
    const double weight = static_cast<double>(k.support[ci]) / n;
    const double prec = k.predicted[ci] > 0 ? static_cast<double>(k.correct[ci]) /
                                                  static_cast<double>(k.predicted[ci])
                                            : 0.0;
    const double rec =
        static_cast<double>(k.correct[ci]) / static_cast<double>(k.support[ci]);
    rep.weighted_precision += weight * prec;
    rep.weighted_recall += weight * rec;
    if (prec + rec > 0) rep.weighted_f1 += weight * (2.0 * prec * rec / (prec + rec));
  }
  return rep;
}

// CSV layout: class-name header, C confusion rows, then metric,value lines.
inline std::string report_to_csv(const EvalReport& rep) {
  std::ostringstream os;
  for (std::size_t j = 0; j < rep.class_names.size(); ++j)
    os << (j ? "," : "") << rep.class_names[j];
  os << "\n";
  for (const auto& row : rep.confusion) {
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << row[j];
    os << "\n";
  }
  os.precision(12);
  os << "accuracy," << rep.accuracy << "\n";
  os << "weighted_precision," << rep.weighted_precision << "\n";
  os << "weighted_recall," << rep.weighted_recall << "\n";
  os << "weighted_f1," << rep.weighted_f1 << "\n";
  os << "samples," << rep.samples << "\n";
  return os.str();
}

inline void write_report_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report to " + path);
  out << report_to_csv(rep);
}

}  // namespace arcnet
