#include <doctest.h>

#include "convsense/nn.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace convsense;
using namespace convsense::nn;

namespace {

// Central finite differences against the analytic gradient; returns the
// maximum relative error over all entries of `param`.
template <typename Param>
double max_rel_err(Param& param, const Param& analytic, const std::function<double()>& loss) {
  const double eps = 1e-5;
  double worst = 0.0;
  for (Eigen::Index j = 0; j < param.cols(); ++j)
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      const double saved = param(i, j);
      param(i, j) = saved + eps;
      const double lp = loss();
      param(i, j) = saved - eps;
      const double lm = loss();
      param(i, j) = saved;
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic(i, j);
      const double rel = std::abs(a - numeric) / std::max({1e-6, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  return worst;
}

MatrixXd randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = d(rng);
  return m;
}

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("dense layer gradients match finite differences") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(seed);
    MatrixXd W = randn(4, 3, rng), X = randn(3, 5, rng), R = randn(4, 5, rng);
    VectorXd b = randn(4, 1, rng);
    auto loss = [&] { return (dense_forward(W, b, X).array() * R.array()).sum(); };

    MatrixXd dW = MatrixXd::Zero(4, 3);
    VectorXd db = VectorXd::Zero(4);
    MatrixXd dX = dense_backward(W, X, R, dW, db);
    CHECK(max_rel_err(W, dW, loss) < kTol);
    CHECK(max_rel_err(X, dX, loss) < kTol);
    VectorXd db_v = db;
    CHECK(max_rel_err(b, db_v, loss) < kTol);
  }
}

TEST_CASE("relu gradients match finite differences away from the kink") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(100 + seed);
    MatrixXd X = randn(4, 6, rng);
    // Push values away from zero so the central difference is valid.
    X = X.unaryExpr([](double v) { return v + (v >= 0 ? 0.2 : -0.2); });
    MatrixXd R = randn(4, 6, rng);
    auto loss = [&] { return (relu(X).array() * R.array()).sum(); };
    MatrixXd dX = relu_backward(X, R);
    CHECK(max_rel_err(X, dX, loss) < kTol);
  }
}

TEST_CASE("cross-entropy gradients and analytic form") {
  SUBCASE("gradient equals (softmax - onehot) / batch") {
    std::mt19937_64 rng(1);
    MatrixXd logits = randn(3, 4, rng);
    std::vector<int> labels{0, 2, 1, 2};
    MatrixXd d = cross_entropy_backward(logits, labels);
    MatrixXd p = softmax_cols(logits);
    for (int c = 0; c < 4; ++c) {
      VectorXd onehot = VectorXd::Zero(3);
      onehot[labels[static_cast<size_t>(c)]] = 1.0;
      CHECK((d.col(c) - (p.col(c) - onehot) / 4.0).cwiseAbs().maxCoeff() < 1e-15);
    }
  }
  SUBCASE("finite differences across seeds") {
    for (unsigned seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(200 + seed);
      MatrixXd logits = randn(3, 5, rng);
      std::vector<int> labels{1, 0, 2, 1, 0};
      auto loss = [&] { return cross_entropy(logits, labels); };
      MatrixXd d = cross_entropy_backward(logits, labels);
      CHECK(max_rel_err(logits, d, loss) < kTol);
    }
  }
  SUBCASE("saturated correct predictions have zero loss and zero gradient") {
    MatrixXd logits = MatrixXd::Zero(3, 3);
    std::vector<int> labels{0, 1, 2};
    for (int c = 0; c < 3; ++c) logits(labels[static_cast<size_t>(c)], c) = 1000.0;
    CHECK(cross_entropy(logits, labels) < 1e-12);
    CHECK(cross_entropy_backward(logits, labels).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("softmax columns sum to 1") {
    std::mt19937_64 rng(2);
    MatrixXd p = softmax_cols(MatrixXd(randn(3, 7, rng, 5.0)));
    for (int c = 0; c < 7; ++c) CHECK(p.col(c).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(300 + seed);
    ConvDims dims{4, 5, 3, 3, 1, 1};
    const int c_in = 2, c_out = 3;
    MatrixXd K = randn(c_out, c_in * 9, rng, 0.5);
    VectorXd b = randn(c_out, 1, rng);
    MatrixXd X = randn(c_in, dims.h * dims.w, rng);
    MatrixXd R = randn(c_out, dims.out_h() * dims.out_w(), rng);

    auto loss = [&] { return (conv2d_forward(K, b, X, dims).array() * R.array()).sum(); };

    ConvCache<double> cache;
    conv2d_forward(K, b, X, dims, &cache);
    MatrixXd dK = MatrixXd::Zero(K.rows(), K.cols());
    VectorXd db = VectorXd::Zero(b.size());
    MatrixXd dX = conv2d_backward(K, cache, c_in, R, dK, db);
    CHECK(max_rel_err(K, dK, loss) < kTol);
    CHECK(max_rel_err(X, dX, loss) < kTol);
    VectorXd db_v = db;
    CHECK(max_rel_err(b, db_v, loss) < kTol);
  }
}

TEST_CASE("1-d convolution is the single-row case of conv2d") {
  std::mt19937_64 rng(3);
  ConvDims dims;
  dims.h = 1;
  dims.w = 9;
  dims.kh = 1;
  dims.kw = 5;
  dims.pad_w = 2;
  MatrixXd K = randn(4, 3 * 5, rng);
  VectorXd b = randn(4, 1, rng);
  MatrixXd X = randn(3, 9, rng);
  auto Y = conv2d_forward(K, b, X, dims);
  CHECK(Y.rows() == 4);
  CHECK(Y.cols() == 9);  // same padding keeps T
  // Interior column: direct dot-product oracle.
  for (int oc = 0; oc < 4; ++oc) {
    double expect = b[oc];
    for (int ic = 0; ic < 3; ++ic)
      for (int k = 0; k < 5; ++k) expect += K(oc, ic * 5 + k) * X(ic, 4 + k - 2);
    CHECK(Y(oc, 4) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("maxpool 2x2 gradients route to the argmax") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(400 + seed);
    const int h = 4, w = 6, channels = 3;
    MatrixXd X = randn(channels, h * w, rng);
    MatrixXd R = randn(channels, (h / 2) * (w / 2), rng);
    auto loss = [&] { return (maxpool2x2_forward(X, h, w).array() * R.array()).sum(); };

    PoolCache<double> cache;
    maxpool2x2_forward(X, h, w, &cache);
    MatrixXd dX = maxpool2x2_backward(cache, channels, R);
    CHECK(max_rel_err(X, dX, loss) < kTol);
  }
  SUBCASE("odd trailing rows and columns are dropped") {
    MatrixXd X = MatrixXd::Random(2, 5 * 7);
    CHECK(maxpool2x2_forward(X, 5, 7).cols() == 2 * 3);
  }
}

TEST_CASE("batchnorm training-mode gradients flow through batch statistics") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(500 + seed);
    const int channels = 3, cols = 4, n_batch = 3;
    std::vector<MatrixXd> batch;
    std::vector<MatrixXd> R;
    for (int i = 0; i < n_batch; ++i) {
      batch.push_back(randn(channels, cols, rng));
      R.push_back(randn(channels, cols, rng));
    }
    VectorXd gamma = randn(channels, 1, rng).cwiseAbs() + VectorXd::Constant(channels, 0.5);
    VectorXd beta = randn(channels, 1, rng);

    auto loss = [&] {
      VectorXd rm = VectorXd::Zero(channels), rv = VectorXd::Ones(channels);
      auto out = batchnorm_forward(batch, gamma, beta, rm, rv, true);
      double acc = 0.0;
      for (int i = 0; i < n_batch; ++i) acc += (out[static_cast<size_t>(i)].array() * R[static_cast<size_t>(i)].array()).sum();
      return acc;
    };

    VectorXd rm = VectorXd::Zero(channels), rv = VectorXd::Ones(channels);
    BatchNormCache<double> cache;
    batchnorm_forward(batch, gamma, beta, rm, rv, true, 0.1, &cache);
    VectorXd dgamma = VectorXd::Zero(channels), dbeta = VectorXd::Zero(channels);
    auto dX = batchnorm_backward(cache, gamma, R, dgamma, dbeta);

    VectorXd dgamma_v = dgamma, dbeta_v = dbeta;
    CHECK(max_rel_err(gamma, dgamma_v, loss) < kTol);
    CHECK(max_rel_err(beta, dbeta_v, loss) < kTol);
    for (int i = 0; i < n_batch; ++i)
      CHECK(max_rel_err(batch[static_cast<size_t>(i)], dX[static_cast<size_t>(i)], loss) < kTol);
  }
}

TEST_CASE("batchnorm pools statistics over ragged batches") {
  // Samples of different widths: the statistics must cover every column.
  std::mt19937_64 rng(777);
  const int channels = 3;
  const std::vector<int> widths{4, 2, 5};
  std::vector<MatrixXd> batch, R;
  for (int w : widths) {
    batch.push_back(randn(channels, w, rng));
    R.push_back(randn(channels, w, rng));
  }

  // Independent statistics: plain sums over the pooled columns.
  const double n = 4 + 2 + 5;
  VectorXd mean = VectorXd::Zero(channels), var = VectorXd::Zero(channels);
  for (const auto& x : batch) mean += x.rowwise().sum();
  mean /= n;
  for (const auto& x : batch)
    var += (x.colwise() - mean).array().square().rowwise().sum().matrix();
  var /= n;

  VectorXd gamma = VectorXd::Ones(channels), beta = VectorXd::Zero(channels);
  VectorXd rm = VectorXd::Zero(channels), rv = VectorXd::Ones(channels);
  BatchNormCache<double> cache;
  auto out = batchnorm_forward(batch, gamma, beta, rm, rv, true, 0.1, &cache);
  CHECK(cache.count == n);
  CHECK((rm - 0.1 * mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((rv - (0.9 + 0.1 * var.array()).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  // With identity affine parameters the pooled output is standardized.
  VectorXd out_mean = VectorXd::Zero(channels), out_var = VectorXd::Zero(channels);
  for (const auto& y : out) out_mean += y.rowwise().sum();
  out_mean /= n;
  for (const auto& y : out)
    out_var += (y.colwise() - out_mean).array().square().rowwise().sum().matrix();
  out_var /= n;
  CHECK(out_mean.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out_var.array() - 1.0).abs().maxCoeff() < 1e-3);  // eps-deflated

  // Gradients stay consistent with the ragged forward pass.
  gamma = randn(channels, 1, rng).cwiseAbs() + VectorXd::Constant(channels, 0.5);
  beta = randn(channels, 1, rng);
  auto loss = [&] {
    VectorXd rm_c = VectorXd::Zero(channels), rv_c = VectorXd::Ones(channels);
    auto o = batchnorm_forward(batch, gamma, beta, rm_c, rv_c, true);
    double acc = 0.0;
    for (size_t i = 0; i < o.size(); ++i) acc += (o[i].array() * R[i].array()).sum();
    return acc;
  };
  VectorXd rm_c = VectorXd::Zero(channels), rv_c = VectorXd::Ones(channels);
  BatchNormCache<double> c2;
  batchnorm_forward(batch, gamma, beta, rm_c, rv_c, true, 0.1, &c2);
  VectorXd dgamma = VectorXd::Zero(channels), dbeta = VectorXd::Zero(channels);
  auto dX = batchnorm_backward(c2, gamma, R, dgamma, dbeta);
  CHECK(max_rel_err(gamma, dgamma, loss) < kTol);
  CHECK(max_rel_err(beta, dbeta, loss) < kTol);
  for (size_t i = 0; i < batch.size(); ++i) CHECK(max_rel_err(batch[i], dX[i], loss) < kTol);
}

TEST_CASE("batchnorm inference-mode gradients treat running stats as constants") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(600 + seed);
    const int channels = 3, cols = 4;
    std::vector<MatrixXd> batch{randn(channels, cols, rng)};
    std::vector<MatrixXd> R{randn(channels, cols, rng)};
    VectorXd gamma = randn(channels, 1, rng);
    VectorXd beta = randn(channels, 1, rng);
    VectorXd rm = randn(channels, 1, rng);
    VectorXd rv = randn(channels, 1, rng).cwiseAbs() + VectorXd::Constant(channels, 0.2);

    auto loss = [&] {
      VectorXd rm_c = rm, rv_c = rv;
      auto out = batchnorm_forward(batch, gamma, beta, rm_c, rv_c, false);
      return (out[0].array() * R[0].array()).sum();
    };

    VectorXd rm_c = rm, rv_c = rv;
    BatchNormCache<double> cache;
    batchnorm_forward(batch, gamma, beta, rm_c, rv_c, false, 0.1, &cache);
    VectorXd dgamma = VectorXd::Zero(channels), dbeta = VectorXd::Zero(channels);
    auto dX = batchnorm_backward_eval(gamma, rv, cache, R, dgamma, dbeta);

    VectorXd dgamma_v = dgamma, dbeta_v = dbeta;
    CHECK(max_rel_err(gamma, dgamma_v, loss) < kTol);
    CHECK(max_rel_err(beta, dbeta_v, loss) < kTol);
    CHECK(max_rel_err(batch[0], dX[0], loss) < kTol);
  }
}

TEST_CASE("lstm gradients match finite differences through time") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(700 + seed);
    const int input = 3, hidden = 4, T = 5;
    MatrixXd W = randn(4 * hidden, input, rng, 0.5);
    MatrixXd U = randn(4 * hidden, hidden, rng, 0.5);
    VectorXd b = randn(4 * hidden, 1, rng, 0.5);
    MatrixXd X = randn(input, T, rng);
    MatrixXd R = randn(hidden, T, rng);

    auto loss = [&] { return (lstm_forward(W, U, b, X).array() * R.array()).sum(); };

    LstmCache<double> cache;
    lstm_forward(W, U, b, X, &cache);
    MatrixXd dW = MatrixXd::Zero(W.rows(), W.cols());
    MatrixXd dU = MatrixXd::Zero(U.rows(), U.cols());
    VectorXd db = VectorXd::Zero(b.size());
    MatrixXd dX = lstm_backward(W, U, cache, R, dW, dU, db);

    CHECK(max_rel_err(W, dW, loss) < kTol);
    CHECK(max_rel_err(U, dU, loss) < kTol);
    CHECK(max_rel_err(X, dX, loss) < kTol);
    VectorXd db_v = db;
    CHECK(max_rel_err(b, db_v, loss) < kTol);
  }
}

TEST_CASE("attention gradients match finite differences") {
  auto make_weights = [](int dq, int dkv, int dk, int dv, std::mt19937_64& rng) {
    AttentionWeights<double> w;
    w.Wq = randn(dk, dq, rng, 0.5);
    w.Wk = randn(dk, dkv, rng, 0.5);
    w.Wv = randn(dv, dkv, rng, 0.5);
    w.bq = randn(dk, 1, rng, 0.5);
    w.bk = randn(dk, 1, rng, 0.5);
    w.bv = randn(dv, 1, rng, 0.5);
    return w;
  };

  SUBCASE("cross-attention over distinct sequences") {
    for (unsigned seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(800 + seed);
      auto w = make_weights(4, 5, 3, 4, rng);
      MatrixXd Xq = randn(4, 3, rng), Xkv = randn(5, 4, rng);
      MatrixXd R = randn(4, 3, rng);
      auto loss = [&] { return (attention_forward(w, Xq, Xkv).array() * R.array()).sum(); };

      AttentionCache<double> cache;
      attention_forward(w, Xq, Xkv, &cache);
      auto g = attention_backward(w, cache, R);
      CHECK(max_rel_err(w.Wq, g.dWq, loss) < kTol);
      CHECK(max_rel_err(w.Wk, g.dWk, loss) < kTol);
      CHECK(max_rel_err(w.Wv, g.dWv, loss) < kTol);
      CHECK(max_rel_err(w.bq, g.dbq, loss) < kTol);
      CHECK(max_rel_err(w.bk, g.dbk, loss) < kTol);
      CHECK(max_rel_err(w.bv, g.dbv, loss) < kTol);
      CHECK(max_rel_err(Xq, g.dXq, loss) < kTol);
      CHECK(max_rel_err(Xkv, g.dXkv, loss) < kTol);
    }
  }
  SUBCASE("self-attention sums query and key/value input gradients") {
    for (unsigned seed = 0; seed < kSeeds; ++seed) {
      std::mt19937_64 rng(900 + seed);
      auto w = make_weights(4, 4, 3, 4, rng);
      MatrixXd X = randn(4, 5, rng);
      MatrixXd R = randn(4, 5, rng);
      auto loss = [&] { return (attention_forward(w, X, X).array() * R.array()).sum(); };

      AttentionCache<double> cache;
      attention_forward(w, X, X, &cache);
      auto g = attention_backward(w, cache, R);
      MatrixXd dX = g.dXq + g.dXkv;
      CHECK(max_rel_err(X, dX, loss) < kTol);
    }
  }
  SUBCASE("attention rows sum to one") {
    std::mt19937_64 rng(4);
    auto w = make_weights(4, 4, 3, 4, rng);
    MatrixXd X = randn(4, 6, rng);
    AttentionCache<double> cache;
    attention_forward(w, X, X, &cache);
    for (Eigen::Index t = 0; t < cache.A.rows(); ++t)
      CHECK(cache.A.row(t).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("a single key receives weight exactly 1") {
    std::mt19937_64 rng(5);
    auto w = make_weights(3, 3, 2, 3, rng);
    MatrixXd Xq = randn(3, 1, rng), Xkv = randn(3, 1, rng);
    AttentionCache<double> cache;
    attention_forward(w, Xq, Xkv, &cache);
    CHECK(cache.A(0, 0) == 1.0);
  }
  SUBCASE("empty sequences are rejected") {
    std::mt19937_64 rng(6);
    auto w = make_weights(3, 3, 2, 3, rng);
    MatrixXd X = randn(3, 2, rng), empty(3, 0);
    CHECK_THROWS_AS(attention_forward(w, X, empty), ArgumentError);
  }
}

TEST_CASE("fusion head: dense over concatenated embeddings splits gradients") {
  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    MatrixXd audio = randn(5, 1, rng), imu = randn(3, 1, rng);
    MatrixXd W = randn(3, 8, rng);
    VectorXd b = randn(3, 1, rng);
    VectorXd R = randn(3, 1, rng);

    auto loss = [&] {
      MatrixXd joint(8, 1);
      joint << audio, imu;
      return (dense_forward(W, b, joint).array() * R.array()).sum();
    };

    MatrixXd joint(8, 1);
    joint << audio, imu;
    MatrixXd dW = MatrixXd::Zero(3, 8);
    VectorXd db = VectorXd::Zero(3);
    MatrixXd dJoint = dense_backward(W, joint, MatrixXd(R), dW, db);
    MatrixXd dAudio = dJoint.topRows(5), dImu = dJoint.bottomRows(3);
    CHECK(max_rel_err(audio, dAudio, loss) < kTol);
    CHECK(max_rel_err(imu, dImu, loss) < kTol);
    CHECK(max_rel_err(W, dW, loss) < kTol);
  }
}

TEST_CASE("mean pooling backward spreads gradient uniformly") {
  std::mt19937_64 rng(7);
  MatrixXd X = randn(4, 6, rng);
  VectorXd R = randn(4, 1, rng);
  auto loss = [&] { return (mean_pool_cols(X).array() * R.array()).sum(); };
  MatrixXd dX = mean_pool_cols_backward(VectorXd(R), 6);
  CHECK(max_rel_err(X, dX, loss) < kTol);
}
