#include <doctest.h>

#include "convsense/dataset.hpp"
#include "convsense/features.hpp"
#include "convsense/synth.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

using namespace convsense;
using namespace convsense::features;

namespace {

// Direct evaluation of the MI formula from explicit joint counts, written
// independently of the implementation.
double mi_from_joint(const std::vector<std::vector<double>>& counts) {
  double n = 0.0;
  std::vector<double> row_sum(counts.size(), 0.0), col_sum(counts[0].size(), 0.0);
  for (size_t i = 0; i < counts.size(); ++i)
    for (size_t j = 0; j < counts[i].size(); ++j) {
      n += counts[i][j];
      row_sum[i] += counts[i][j];
      col_sum[j] += counts[i][j];
    }
  double mi = 0.0;
  for (size_t i = 0; i < counts.size(); ++i)
    for (size_t j = 0; j < counts[i].size(); ++j) {
      if (counts[i][j] == 0.0) continue;
      const double pxy = counts[i][j] / n;
      mi += pxy * std::log(pxy / ((row_sum[i] / n) * (col_sum[j] / n)));
    }
  return mi;
}

double entropy_of(const std::vector<int>& symbols) {
  std::map<int, double> counts;
  for (int s : symbols) counts[s] += 1.0;
  const double n = static_cast<double>(symbols.size());
  double h = 0.0;
  for (const auto& [sym, c] : counts) h -= (c / n) * std::log(c / n);
  return h;
}

}  // namespace

TEST_CASE("discretize: equal-width bins over [min, max]") {
  SUBCASE("integers 0..9 land in bins 0..9") {
    VectorXd v(10);
    for (int i = 0; i < 10; ++i) v[i] = i;
    auto bins = discretize(v);
    for (int i = 0; i < 10; ++i) CHECK(bins[static_cast<size_t>(i)] == i);
  }
  SUBCASE("the maximum maps to bin 9, not 10") {
    VectorXd v(3);
    v << 0.0, 0.5, 1.0;
    CHECK(discretize(v)[2] == 9);
  }
  SUBCASE("constant arrays collapse to bin 0") {
    VectorXd v = VectorXd::Constant(7, 3.25);
    for (int b : discretize(v)) CHECK(b == 0);
  }
  SUBCASE("uniform samples fill bins evenly (3-sigma binomial bound)") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    VectorXd v(10000);
    for (int i = 0; i < 10000; ++i) v[i] = unit(rng);
    auto bins = discretize(v);
    std::vector<int> counts(10, 0);
    for (int b : bins) ++counts[static_cast<size_t>(b)];
    const double sigma = std::sqrt(0.1 * 0.9 / 10000.0);
    for (int b = 0; b < 10; ++b)
      CHECK(std::abs(counts[static_cast<size_t>(b)] / 10000.0 - 0.1) <= 3.0 * sigma);
  }
  SUBCASE("empty and all-NaN inputs are rejected") {
    CHECK_THROWS_AS(discretize(VectorXd()), ArgumentError);
    VectorXd nan_v = VectorXd::Constant(4, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(discretize(nan_v), ArgumentError);
  }
}

TEST_CASE("mutual_information matches analytic and formula-oracle values") {
  SUBCASE("identical two-symbol uniform sequences give ln 2") {
    std::vector<int> x{0, 1, 0, 1, 0, 1, 0, 1};
    CHECK(mutual_information(x, x) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("an exact product table gives zero") {
    std::vector<int> x{0, 0, 1, 1};
    std::vector<int> y{0, 1, 0, 1};
    CHECK(std::abs(mutual_information(x, y)) < 1e-12);
  }
  SUBCASE("joint counts [[2,1],[1,2]] match direct formula evaluation") {
    std::vector<int> x{0, 0, 0, 1, 1, 1};
    std::vector<int> y{0, 0, 1, 0, 1, 1};
    const double expect = mi_from_joint({{2.0, 1.0}, {1.0, 2.0}});
    CHECK(mutual_information(x, y) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("symmetric in its arguments") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> xs(0, 9), ys(0, 2);
    std::vector<int> x(400), y(400);
    for (int i = 0; i < 400; ++i) {
      x[static_cast<size_t>(i)] = xs(rng);
      y[static_cast<size_t>(i)] = ys(rng);
    }
    CHECK(mutual_information(x, y) == mutual_information(y, x));
  }
  SUBCASE("invariant under injective relabeling of x") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> xs(0, 9), ys(0, 2);
    std::vector<int> x(300), y(300), relabeled(300);
    const int perm[10] = {7, 2, 9, 0, 4, 1, 8, 3, 6, 5};
    for (int i = 0; i < 300; ++i) {
      x[static_cast<size_t>(i)] = xs(rng);
      y[static_cast<size_t>(i)] = ys(rng);
      relabeled[static_cast<size_t>(i)] = perm[x[static_cast<size_t>(i)]];
    }
    CHECK(mutual_information(x, y) == doctest::Approx(mutual_information(relabeled, y)).epsilon(1e-12));
  }
  SUBCASE("bounded by 0 and min of the marginal entropies") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> xs(0, 9), ys(0, 2);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<int> x(200), y(200);
      for (int i = 0; i < 200; ++i) {
        x[static_cast<size_t>(i)] = xs(rng);
        y[static_cast<size_t>(i)] = ys(rng) == 0 ? x[static_cast<size_t>(i)] % 3 : ys(rng);
      }
      const double mi = mutual_information(x, y);
      CHECK(mi >= -1e-12);
      CHECK(mi <= std::min(entropy_of(x), entropy_of(y)) + 1e-12);
    }
  }
  SUBCASE("length mismatch is rejected") {
    CHECK_THROWS_AS(mutual_information({0, 1}, {0}), ArgumentError);
  }
}

TEST_CASE("rank_features orders by score with name tiebreak") {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 90;
  std::vector<ClassLabel> labels;
  MatrixXd features(n, 4);
  for (int i = 0; i < n; ++i) {
    const auto label = static_cast<ClassLabel>(i % 3);
    labels.push_back(label);
    features(i, 0) = unit(rng);                      // noise
    features(i, 1) = static_cast<double>(i % 3);     // label copy
    features(i, 2) = 0.5;                            // constant twin a
    features(i, 3) = 0.5;                            // constant twin b
  }
  auto scores = rank_features(features, {"noise", "copy", "twin_b", "twin_a"}, labels);
  REQUIRE(scores.size() == 4);
  CHECK(scores[0].feature_name == "copy");
  CHECK(scores[0].mi_nats == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  // The two constants tie at zero; names decide their order.
  CHECK(scores[2].feature_name == "twin_a");
  CHECK(scores[3].feature_name == "twin_b");

  SUBCASE("row mismatch is rejected") {
    labels.pop_back();
    CHECK_THROWS_AS(rank_features(features, {"a", "b", "c", "d"}, labels), ArgumentError);
  }
}

TEST_CASE("on synthetic data, spectral energy outranks the raw channel mean") {
  SynthSpec spec;
  spec.n_groups = 2;
  spec.session_len_s = 600.0;
  spec.seed = 23;
  std::vector<LabeledSegment> segments;
  for (const auto& session : synth_dataset(spec))
    for (auto& seg : segment_session(session, 30.0)) segments.push_back(std::move(seg));

  auto table = imu_feature_table(segments);
  auto scores = rank_features(table.values, table.names, table.labels);

  double best_energy = 0.0, best_mean = 0.0;
  for (const auto& s : scores) {
    if (s.feature_name.ends_with("_energy")) best_energy = std::max(best_energy, s.mi_nats);
    if (s.feature_name.ends_with("_mean")) best_mean = std::max(best_mean, s.mi_nats);
  }
  CHECK(best_energy > best_mean);
}
