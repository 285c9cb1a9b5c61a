#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tgcnn/error.hpp"
#include "tgcnn/features.hpp"

namespace tgcnn {

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// A sample is predicted positive when its score is >= threshold.
inline ConfusionCounts confusion(std::span<const double> scores,
                                 std::span<const int> labels, double threshold) {
  if (scores.size() != labels.size()) {
    throw ShapeError("confusion: scores and labels differ in length");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == 1;
    if (pred && pos) ++c.tp;
    else if (pred) ++c.fp;
    else if (pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1_score(const ConfusionCounts& c) {
  const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
  return den == 0 ? 0.0 : static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

// 1 when no positives exist in either predictions or labels.
inline double iou_score(const ConfusionCounts& c) {
  const std::uint64_t den = c.tp + c.fp + c.fn;
  return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double accuracy(const ConfusionCounts& c) {
  const std::uint64_t n = c.total();
  return n == 0 ? 0.0 : static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
}

// Mann-Whitney U / (n_pos n_neg) with midranks for ties; 0.5 when a class is
// missing.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auc_roc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks doubled (1-based), so midranks stay integral.
  double pos_rank2 = 0.0;
  std::uint64_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double rank2 = static_cast<double>(i + 1 + j);  // 2 * midrank
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) {
        pos_rank2 += rank2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double np = static_cast<double>(n_pos);
  const double u = pos_rank2 / 2.0 - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

struct MetricsReport {
  double f1 = 0.0;
  double auc_roc = 0.5;
  double iou = 0.0;
  double accuracy = 0.0;
  ConfusionCounts counts;
  double threshold = 0.5;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport compute_metrics(std::span<const double> probabilities,
                                     std::span<const int> labels,
                                     double threshold = 0.5) {
  if (probabilities.empty()) throw InputError("metrics: empty sample set");
  MetricsReport r;
  r.counts = confusion(probabilities, labels, threshold);
  r.f1 = f1_score(r.counts);
  r.iou = iou_score(r.counts);
  r.accuracy = accuracy(r.counts);
  r.auc_roc = tgcnn::auc_roc(probabilities, labels);
  r.threshold = threshold;
  return r;
}

inline void write_report(std::ostream& out, const MetricsReport& r) {
  using detail::format_double;
  out << "f1=" << format_double(r.f1) << '\n'
      << "auc_roc=" << format_double(r.auc_roc) << '\n'
      << "iou=" << format_double(r.iou) << '\n'
      << "accuracy=" << format_double(r.accuracy) << '\n'
      << "tp=" << r.counts.tp << '\n'
      << "fp=" << r.counts.fp << '\n'
      << "tn=" << r.counts.tn << '\n'
      << "fn=" << r.counts.fn << '\n'
      << "threshold=" << format_double(r.threshold) << '\n';
}

}  // namespace tgcnn
