#pragma once

#include "convsense/types.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace convsense::eval {

// Rows index the true class, columns the predicted class.
struct ConfusionMatrix {
  Eigen::Matrix<long long, 3, 3> counts = Eigen::Matrix<long long, 3, 3>::Zero();

  long long total() const { return counts.sum(); }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    counts += other.counts;
    return *this;
  }
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels);

struct MacroScores {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

// Unweighted means over the 3 classes. Zero-denominator ratios (a class
// never predicted or without support) contribute 0.
MacroScores macro_scores(const ConfusionMatrix& cm);

// Per-class F1 weighted by true-class support fraction.
double weighted_f1(const ConfusionMatrix& cm);

double accuracy(const ConfusionMatrix& cm);

using Metric = std::function<double(const std::vector<int>& preds, const std::vector<int>& labels)>;

struct BootstrapInterval {
  double lo = 0.0;
  double hi = 0.0;
  int n_redraws = 0;  // resamples redrawn because the metric was undefined
};

// Percentile bootstrap over segment indices: `rounds` resamples with
// replacement, interval = outward-rounded 2.5 / 97.5 percentiles of the
// metric distribution. Deterministic given seed. Resamples on which the
// metric is undefined (non-finite) are redrawn and counted.
BootstrapInterval bootstrap_ci(const std::vector<int>& preds, const std::vector<int>& labels,
                               const Metric& metric, int rounds = 200, std::uint64_t seed = 0);

}  // namespace convsense::eval
