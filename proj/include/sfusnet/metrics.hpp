#pragma once

#include <cmath>
#include <vector>

#include "sfusnet/common.hpp"

namespace sfus {

// One-vs-rest tallies for a single class.
struct ConfusionCounts {
  index_t tp = 0, tn = 0, fp = 0, fn = 0;
  index_t total() const { return tp + tn + fp + fn; }
};

struct ConfusionMatrix {
  index_t k = 0;
  std::vector<index_t> cells;  // k*k, rows = true class, cols = predicted

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(index_t classes)
      : k(classes), cells(static_cast<std::size_t>(classes * classes), 0) {
    SFUS_CHECK(classes >= 1, "confusion matrix needs at least one class");
  }

  index_t& at(index_t truth, index_t pred) {
    return cells[static_cast<std::size_t>(truth * k + pred)];
  }
  index_t at(index_t truth, index_t pred) const {
    return cells[static_cast<std::size_t>(truth * k + pred)];
  }
  index_t total() const {
    index_t t = 0;
    for (index_t c : cells) t += c;
    return t;
  }
  index_t trace() const {
    index_t t = 0;
    for (index_t i = 0; i < k; ++i) t += at(i, i);
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<index_t>& predictions,
                                        const std::vector<index_t>& labels, index_t k) {
  SFUS_CHECK(predictions.size() == labels.size(),
             "confusion_matrix: " << predictions.size() << " predictions vs " << labels.size()
                                  << " labels");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const index_t t = labels[i], p = predictions[i];
    SFUS_CHECK(t >= 0 && t < k, "label " << t << " outside [0," << k << ")");
    SFUS_CHECK(p >= 0 && p < k, "prediction " << p << " outside [0," << k << ")");
    ++cm.at(t, p);
  }
  return cm;
}

// Reduce class c against the rest: TP = cm[c,c], FN = row remainder,
// FP = column remainder, TN = everything else.
inline ConfusionCounts ovr_counts(const ConfusionMatrix& cm, index_t c) {
  SFUS_CHECK(c >= 0 && c < cm.k, "class " << c << " outside [0," << cm.k << ")");
  ConfusionCounts counts;
  counts.tp = cm.at(c, c);
  for (index_t p = 0; p < cm.k; ++p)
    if (p != c) counts.fn += cm.at(c, p);
  for (index_t t = 0; t < cm.k; ++t)
    if (t != c) counts.fp += cm.at(t, c);
  counts.tn = cm.total() - counts.tp - counts.fn - counts.fp;
  return counts;
}

// Zero denominators report value 0 with defined=false (the 0.00% convention).
struct MetricValue {
  double value = 0;
  bool defined = true;
};

inline MetricValue ratio_metric(index_t num, index_t den) {
  if (den == 0) return {0.0, false};
  return {static_cast<double>(num) / static_cast<double>(den), true};
}

inline MetricValue metric_accuracy(const ConfusionCounts& c) {
  return ratio_metric(c.tp + c.tn, c.total());
}
inline MetricValue metric_sensitivity(const ConfusionCounts& c) {
  return ratio_metric(c.tp, c.tp + c.fn);
}
inline MetricValue metric_specificity(const ConfusionCounts& c) {
  return ratio_metric(c.tn, c.tn + c.fp);
}
inline MetricValue metric_precision(const ConfusionCounts& c) {
  return ratio_metric(c.tp, c.tp + c.fp);
}

// Multi-class accuracy: trace / total.
inline double overall_accuracy(const ConfusionMatrix& cm) {
  const index_t total = cm.total();
  SFUS_CHECK(total > 0, "overall_accuracy on an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

struct MeanStd {
  double mean = 0;
  double stddev = 0;
};

// Arithmetic mean and sample standard deviation (divisor k-1).
inline MeanStd aggregate_folds(const std::vector<double>& values) {
  const index_t k = static_cast<index_t>(values.size());
  SFUS_CHECK(k >= 2, "aggregate_folds needs at least 2 values, got " << k);
  MeanStd out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(k);
  double ss = 0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(k - 1));
  return out;
}

}  // namespace sfus
