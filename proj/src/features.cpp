#include "convsense/features.hpp"

#include "convsense/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace convsense::features {

std::vector<int> discretize(const VectorXd& values) {
  if (values.size() == 0) throw ArgumentError("discretize: empty input");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (std::isfinite(values[i])) {
      lo = std::min(lo, values[i]);
      hi = std::max(hi, values[i]);
    }
  if (!std::isfinite(lo)) throw ArgumentError("discretize: no finite values");

  std::vector<int> bins(static_cast<size_t>(values.size()), 0);
  const double width = hi - lo;
  if (width <= 0) return bins;  // constant input: everything in bin 0
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    const auto b = static_cast<int>((values[i] - lo) / width * kHistogramBins);
    bins[static_cast<size_t>(i)] = std::clamp(b, 0, kHistogramBins - 1);
  }
  return bins;
}

double mutual_information(const std::vector<int>& x_bins, const std::vector<int>& y_symbols) {
  if (x_bins.size() != y_symbols.size())
    throw ArgumentError("mutual_information: sequence lengths differ");
  if (x_bins.empty()) throw ArgumentError("mutual_information: empty input");

  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  const double n = static_cast<double>(x_bins.size());
  for (size_t i = 0; i < x_bins.size(); ++i) {
    joint[{x_bins[i], y_symbols[i]}] += 1.0;
    px[x_bins[i]] += 1.0;
    py[y_symbols[i]] += 1.0;
  }
  double mi = 0.0;
  for (const auto& [cell, count] : joint) {
    const double pxy = count / n;
    mi += pxy * std::log(pxy * n * n / (px[cell.first] * py[cell.second]));
  }
  return mi;
}

std::vector<FeatureScore> rank_features(const MatrixXd& feature_matrix,
                                        const std::vector<std::string>& names,
                                        const std::vector<ClassLabel>& labels) {
  if (static_cast<size_t>(feature_matrix.cols()) != names.size())
    throw ArgumentError("rank_features: name count does not match feature columns");
  if (static_cast<size_t>(feature_matrix.rows()) != labels.size())
    throw ArgumentError("rank_features: label count does not match feature rows");

  std::vector<int> y(labels.size());
  std::transform(labels.begin(), labels.end(), y.begin(),
                 [](ClassLabel l) { return static_cast<int>(l); });

  std::vector<FeatureScore> scores;
  scores.reserve(names.size());
  for (Eigen::Index f = 0; f < feature_matrix.cols(); ++f)
    scores.push_back({names[static_cast<size_t>(f)],
                      mutual_information(discretize(feature_matrix.col(f)), y)});
  std::sort(scores.begin(), scores.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.mi_nats != b.mi_nats) return a.mi_nats > b.mi_nats;
    return a.feature_name < b.feature_name;
  });
  return scores;
}

FeatureTable imu_feature_table(const std::vector<LabeledSegment>& segments) {
  if (segments.empty()) throw ArgumentError("imu_feature_table: no segments");

  const std::vector<std::string> stats = {"mean", "std", "min", "max", "rms", "zcr", "energy"};
  FeatureTable table;
  for (int c = 0; c < 6; ++c)
    for (const auto& stat : stats) table.names.push_back("imu" + std::to_string(c) + "_" + stat);

  table.values.resize(static_cast<Eigen::Index>(segments.size()),
                      static_cast<Eigen::Index>(table.names.size()));
  for (size_t s = 0; s < segments.size(); ++s) {
    const MatrixXd& imu = segments[s].imu_slice;
    // Per-channel short-time spectral energy of the raw slice. Standardizing
    // first would pin every channel's variance to 1 and flatten the feature.
    VectorXd channel_energy = VectorXd::Zero(6);
    for (const auto& frame : dsp::frame_imu(imu))
      channel_energy += dsp::imu_energy(frame).rowwise().sum();

    for (Eigen::Index c = 0; c < 6; ++c) {
      const auto row = imu.row(c);
      const double mean = row.mean();
      const double var = (row.array() - mean).square().sum() / static_cast<double>(row.size());
      int crossings = 0;
      for (Eigen::Index i = 1; i < row.size(); ++i)
        if ((row[i] >= 0.0) != (row[i - 1] >= 0.0)) ++crossings;
      const Eigen::Index base = c * static_cast<Eigen::Index>(stats.size());
      table.values(static_cast<Eigen::Index>(s), base + 0) = mean;
      table.values(static_cast<Eigen::Index>(s), base + 1) = std::sqrt(var);
      table.values(static_cast<Eigen::Index>(s), base + 2) = row.minCoeff();
      table.values(static_cast<Eigen::Index>(s), base + 3) = row.maxCoeff();
      table.values(static_cast<Eigen::Index>(s), base + 4) =
          std::sqrt(row.array().square().sum() / static_cast<double>(row.size()));
      table.values(static_cast<Eigen::Index>(s), base + 5) =
          static_cast<double>(crossings) / static_cast<double>(row.size() - 1);
      table.values(static_cast<Eigen::Index>(s), base + 6) = channel_energy[c];
    }
    table.labels.push_back(segments[s].label);
  }
  return table;
}

}  // namespace convsense::features
