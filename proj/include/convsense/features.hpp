#pragma once

#include "convsense/types.hpp"

#include <string>
#include <vector>

namespace convsense::features {

inline constexpr int kHistogramBins = 10;

// Equal-width binning into [0, 10): bins span [min, max] of the finite
// values, the maximum maps to bin 9, constant input maps to bin 0.
// Non-finite entries map to bin 0. Throws when no finite value exists.
std::vector<int> discretize(const VectorXd& values);

// Empirical mutual information (nats) between two discrete sequences:
// sum over nonzero joint cells of p(x,y) * ln(p(x,y) / (p(x) p(y))).
double mutual_information(const std::vector<int>& x_bins, const std::vector<int>& y_symbols);

struct FeatureScore {
  std::string feature_name;
  double mi_nats = 0.0;
};

// Scores each feature column against the labels (columns discretized to 10
// bins first) and sorts descending; ties break by feature name.
std::vector<FeatureScore> rank_features(const MatrixXd& feature_matrix,
                                        const std::vector<std::string>& names,
                                        const std::vector<ClassLabel>& labels);

struct FeatureTable {
  MatrixXd values;  // segments x features
  std::vector<std::string> names;
  std::vector<ClassLabel> labels;
};

// Statistical catalog over each segment's raw IMU slice: per channel mean,
// std, min, max, RMS, zero-crossing rate, and short-time spectral energy
// (the framed energy images summed per channel).
FeatureTable imu_feature_table(const std::vector<LabeledSegment>& segments);

}  // namespace convsense::features
