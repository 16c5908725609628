#include "convsense/metrics.hpp"

#include "convsense/seed.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace convsense::eval {

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size())
    throw ArgumentError("confusion_matrix: prediction and label counts differ");
  ConfusionMatrix cm;
  for (size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses || preds[i] < 0 || preds[i] >= kNumClasses)
      throw ArgumentError("confusion_matrix: class index out of range");
    ++cm.counts(labels[i], preds[i]);
  }
  return cm;
}

namespace {

// Per-class precision/recall/F1 with the zero-denominator-contributes-0 rule.
struct ClassScores {
  double precision[3], recall[3], f1[3];
  double support[3];
};

ClassScores per_class(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ArgumentError("metrics: empty confusion matrix");
  ClassScores s{};
  for (int c = 0; c < kNumClasses; ++c) {
    const double tp = static_cast<double>(cm.counts(c, c));
    const double pred_total = static_cast<double>(cm.counts.col(c).sum());
    const double true_total = static_cast<double>(cm.counts.row(c).sum());
    s.precision[c] = pred_total > 0 ? tp / pred_total : 0.0;
    s.recall[c] = true_total > 0 ? tp / true_total : 0.0;
    const double denom = s.precision[c] + s.recall[c];
    s.f1[c] = denom > 0 ? 2.0 * s.precision[c] * s.recall[c] / denom : 0.0;
    s.support[c] = true_total;
  }
  return s;
}

}  // namespace

MacroScores macro_scores(const ConfusionMatrix& cm) {
  const auto s = per_class(cm);
  MacroScores out;
  for (int c = 0; c < kNumClasses; ++c) {
    out.f1 += s.f1[c] / kNumClasses;
    out.precision += s.precision[c] / kNumClasses;
    out.recall += s.recall[c] / kNumClasses;
  }
  return out;
}

double weighted_f1(const ConfusionMatrix& cm) {
  const auto s = per_class(cm);
  const double total = static_cast<double>(cm.total());
  double out = 0.0;
  for (int c = 0; c < kNumClasses; ++c) out += s.f1[c] * s.support[c] / total;
  return out;
}

double accuracy(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw ArgumentError("metrics: empty confusion matrix");
  return static_cast<double>(cm.counts.diagonal().sum()) / static_cast<double>(cm.total());
}

BootstrapInterval bootstrap_ci(const std::vector<int>& preds, const std::vector<int>& labels,
                               const Metric& metric, int rounds, std::uint64_t seed) {
  if (preds.size() != labels.size())
    throw ArgumentError("bootstrap_ci: prediction and label counts differ");
  if (preds.empty()) throw ArgumentError("bootstrap_ci: empty sample");
  if (rounds < 2) throw ArgumentError("bootstrap_ci: need at least 2 rounds");

  auto rng = make_rng(seed, "bootstrap");
  std::uniform_int_distribution<size_t> pick(0, preds.size() - 1);

  BootstrapInterval interval;
  std::vector<double> values;
  values.reserve(static_cast<size_t>(rounds));
  std::vector<int> p(preds.size()), l(labels.size());
  const int max_redraws = 100 * rounds;
  while (values.size() < static_cast<size_t>(rounds)) {
    for (size_t i = 0; i < preds.size(); ++i) {
      const size_t j = pick(rng);
      p[i] = preds[j];
      l[i] = labels[j];
    }
    const double v = metric(p, l);
    if (std::isfinite(v)) {
      values.push_back(v);
    } else {
      if (++interval.n_redraws > max_redraws)
        throw ValidationError("bootstrap_ci: metric undefined on too many resamples");
    }
  }
  std::sort(values.begin(), values.end());
  // Outward-rounded order statistics: never narrower than the exact quantile.
  const auto last = static_cast<double>(rounds - 1);
  const auto lo_idx = static_cast<size_t>(std::floor(0.025 * last));
  const auto hi_idx = static_cast<size_t>(std::ceil(0.975 * last));
  interval.lo = values[lo_idx];
  interval.hi = values[hi_idx];
  return interval;
}

}  // namespace convsense::eval
