#include "convsense/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "convsense/seed.hpp"

namespace convsense::models {

using json = nlohmann::json;

const MatrixXd& tensor(const ModelWeights& w, const std::string& name) {
  auto it = w.tensors.find(name);
  if (it == w.tensors.end()) throw ArgumentError("missing tensor: " + name);
  return it->second;
}

VectorXd bias(const ModelWeights& w, const std::string& name) {
  const MatrixXd& m = tensor(w, name);
  if (m.cols() != 1) throw ArgumentError("tensor is not a column: " + name);
  return m.col(0);
}

// Returns the zero-initialized gradient slot for `name`, creating it on
// first touch with the given shape.
MatrixXd& grad_slot(GradMap& g, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return g.try_emplace(name, MatrixXd::Zero(rows, cols)).first->second;
}

MatrixXd dense_backward_named(const ModelWeights& w, const std::string& name, const MatrixXd& X,
                              const MatrixXd& dY, GradMap& g) {
  const MatrixXd& W = tensor(w, name + ".W");
  MatrixXd& dW = grad_slot(g, name + ".W", W.rows(), W.cols());
  VectorXd db = VectorXd::Zero(W.rows());
  MatrixXd dX = nn::dense_backward(W, X, dY, dW, db);
  grad_slot(g, name + ".b", W.rows(), 1) += db;
  return dX;
}

MatrixXd uniform_tensor(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                        std::uint64_t seed, const std::string& name) {
  auto rng = make_rng(seed, "init/" + name);
  // Uniform bound sized for ReLU stacks (variance 2/fan_in).
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-a, a);
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  return m;
}

namespace {

std::vector<MatrixXd> bn_forward_named(ModelWeights& w, const std::string& name,
                                       const std::vector<MatrixXd>& ys, bool training,
                                       nn::BatchNormCache<double>* cache) {
  VectorXd gamma = bias(w, name + ".gamma");
  VectorXd beta = bias(w, name + ".beta");
  VectorXd rm = bias(w, name + ".running_mean");
  VectorXd rv = bias(w, name + ".running_var");
  auto out = nn::batchnorm_forward(ys, gamma, beta, rm, rv, training, 0.1, cache);
  if (training) {
    w.tensors[name + ".running_mean"] = rm;
    w.tensors[name + ".running_var"] = rv;
  }
  return out;
}

std::vector<MatrixXd> bn_backward_named(const ModelWeights& w, const std::string& name,
                                        const nn::BatchNormCache<double>& cache,
                                        const std::vector<MatrixXd>& dY, GradMap& g) {
  VectorXd gamma = bias(w, name + ".gamma");
  VectorXd dgamma = VectorXd::Zero(gamma.size());
  VectorXd dbeta = VectorXd::Zero(gamma.size());
  auto dX = nn::batchnorm_backward(cache, gamma, dY, dgamma, dbeta);
  grad_slot(g, name + ".gamma", gamma.size(), 1) += dgamma;
  grad_slot(g, name + ".beta", gamma.size(), 1) += dbeta;
  return dX;
}

nn::AttentionWeights<double> attention_weights(const ModelWeights& w, const std::string& prefix) {
  nn::AttentionWeights<double> a;
  a.Wq = tensor(w, prefix + "attn.Wq");
  a.Wk = tensor(w, prefix + "attn.Wk");
  a.Wv = tensor(w, prefix + "attn.Wv");
  a.bq = bias(w, prefix + "attn.bq");
  a.bk = bias(w, prefix + "attn.bk");
  a.bv = bias(w, prefix + "attn.bv");
  return a;
}

// Adds every gradient of `src` into `dst`, creating missing slots.
void accumulate_grads(GradMap& dst, const GradMap& src) {
  for (const auto& [name, grad] : src) {
    auto [it, fresh] = dst.try_emplace(name, grad);
    if (!fresh) it->second += grad;
  }
}

// One IMU channel through the token trunk's shared 1-D conv stack; returns
// the post-ReLU features (conv2_out x L) and fills the per-channel caches.
MatrixXd channel_conv_forward(const MatrixXd& K1, const VectorXd& b1, const MatrixXd& K2,
                              const VectorXd& b2, const MatrixXd& row, AttentionSampleCache& c,
                              size_t r) {
  const auto L = static_cast<int>(row.cols());
  nn::ConvDims d1{1, L, 1, 7, 0, 3};
  c.y1[r] = nn::conv2d_forward(K1, b1, row, d1, &c.c1[r]);
  MatrixXd a1 = nn::relu(c.y1[r]);
  nn::ConvDims d2{1, L, 1, 5, 0, 2};
  c.y2[r] = nn::conv2d_forward(K2, b2, a1, d2, &c.c2[r]);
  return nn::relu(c.y2[r]);
}

// Backward through one channel given the gradient of its post-ReLU features.
void channel_conv_backward(const MatrixXd& K1, const MatrixXd& K2, const AttentionSampleCache& c,
                           size_t r, const MatrixXd& dA2, MatrixXd& gK1, VectorXd& gb1,
                           MatrixXd& gK2, VectorXd& gb2) {
  MatrixXd dy2 = nn::relu_backward(c.y2[r], dA2);
  MatrixXd dA1 = nn::conv2d_backward(K2, c.c2[r], K1.rows(), dy2, gK2, gb2);
  MatrixXd dy1 = nn::relu_backward(c.y1[r], dA1);
  nn::conv2d_backward(K1, c.c1[r], 1, dy1, gK1, gb1);
}

}  // namespace

// ---------------------------------------------------------------------------
// pure_acoustic: spectrogram -> [conv1d + BN + ReLU] x2 with a per-step linear
// skip from the raw bands, LSTM over time, two dense layers to the embedding.
// The conv/skip/LSTM core is exposed on its own (acoustic_sequence_*) so that
// fusion heads can consume the full recurrent sequence.
// ---------------------------------------------------------------------------

std::vector<MatrixXd> acoustic_sequence_forward(const ModelSpec& spec, ModelWeights& w,
                                                const std::vector<ModelInput>& inputs,
                                                bool training, BatchCache* cache,
                                                const std::string& P) {
  const int k = spec.conv_kernel;
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const VectorXd b1 = bias(w, P + "conv1.b");
  const VectorXd b2 = bias(w, P + "conv2.b");
  const MatrixXd& Wskip = tensor(w, P + "skip.W");
  const Eigen::Index bands = Wskip.cols();
  const auto B = static_cast<Eigen::Index>(inputs.size());

  std::vector<AcousticSampleCache> sc(static_cast<size_t>(B));
  std::vector<MatrixXd> y1(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const MatrixXd& X = inputs[static_cast<size_t>(s)].spectrogram;
    if (X.rows() != bands)
      throw ArgumentError("spectrogram has " + std::to_string(X.rows()) + " bands, expected " +
                          std::to_string(bands));
    if (X.cols() < 1) throw ArgumentError("empty spectrogram");
    nn::ConvDims d{1, static_cast<int>(X.cols()), 1, k, 0, (k - 1) / 2};
    auto& c = sc[static_cast<size_t>(s)];
    c.x = X;
    y1[static_cast<size_t>(s)] = nn::conv2d_forward(K1, b1, X, d, &c.c1);
  }
  nn::BatchNormCache<double> bn1_local;
  auto z1 = bn_forward_named(w, P + "bn1", y1, training, cache ? &cache->bn1 : &bn1_local);

  std::vector<MatrixXd> y2(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    auto& c = sc[static_cast<size_t>(s)];
    c.z1 = z1[static_cast<size_t>(s)];
    MatrixXd a1 = nn::relu(c.z1);
    nn::ConvDims d{1, static_cast<int>(a1.cols()), 1, k, 0, (k - 1) / 2};
    y2[static_cast<size_t>(s)] = nn::conv2d_forward(K2, b2, a1, d, &c.c2);
  }
  nn::BatchNormCache<double> bn2_local;
  auto z2 = bn_forward_named(w, P + "bn2", y2, training, cache ? &cache->bn2 : &bn2_local);

  const MatrixXd& Wl = tensor(w, P + "lstm.W");
  const MatrixXd& Ul = tensor(w, P + "lstm.U");
  const VectorXd bl = bias(w, P + "lstm.b");
  const VectorXd bskip = bias(w, P + "skip.b");

  std::vector<MatrixXd> seqs(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    auto& c = sc[static_cast<size_t>(s)];
    c.z2 = z2[static_cast<size_t>(s)];
    MatrixXd a2 = nn::relu(c.z2);
    MatrixXd skip = nn::dense_forward(Wskip, bskip, c.x);
    MatrixXd joint(a2.rows() + skip.rows(), a2.cols());
    joint << a2, skip;
    nn::LstmCache<double> lcache;
    seqs[static_cast<size_t>(s)] = nn::lstm_forward(Wl, Ul, bl, joint, &lcache);
    c.lstm = std::move(lcache);
  }
  if (cache) cache->acoustic = std::move(sc);
  return seqs;
}

GradMap acoustic_sequence_backward(const ModelSpec& spec, const ModelWeights& w,
                                   const BatchCache& cache, const std::vector<MatrixXd>& d_seq,
                                   const std::string& P) {
  GradMap g;
  const auto B = static_cast<Eigen::Index>(cache.acoustic.size());
  if (d_seq.size() != static_cast<size_t>(B))
    throw ArgumentError("sequence gradient count does not match the cached batch");

  const MatrixXd& Wl = tensor(w, P + "lstm.W");
  const MatrixXd& Ul = tensor(w, P + "lstm.U");
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const MatrixXd& Wskip = tensor(w, P + "skip.W");
  const Eigen::Index c2_out = K2.rows();

  MatrixXd& gWl = grad_slot(g, P + "lstm.W", Wl.rows(), Wl.cols());
  MatrixXd& gUl = grad_slot(g, P + "lstm.U", Ul.rows(), Ul.cols());
  VectorXd gbl = VectorXd::Zero(Wl.rows());

  std::vector<MatrixXd> dz2(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.acoustic[static_cast<size_t>(s)];
    MatrixXd dZ = nn::lstm_backward(Wl, Ul, c.lstm, d_seq[static_cast<size_t>(s)], gWl, gUl, gbl);
    MatrixXd dA2 = dZ.topRows(c2_out);
    dense_backward_named(w, P + "skip", c.x, MatrixXd(dZ.bottomRows(Wskip.rows())), g);
    dz2[static_cast<size_t>(s)] = nn::relu_backward(c.z2, dA2);
  }
  grad_slot(g, P + "lstm.b", gbl.size(), 1) += gbl;

  auto dy2 = bn_backward_named(w, P + "bn2", cache.bn2, dz2, g);

  MatrixXd& gK2 = grad_slot(g, P + "conv2.K", K2.rows(), K2.cols());
  VectorXd gb2 = VectorXd::Zero(K2.rows());
  std::vector<MatrixXd> dz1(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.acoustic[static_cast<size_t>(s)];
    MatrixXd dA1 = nn::conv2d_backward(K2, c.c2, K1.rows(), dy2[static_cast<size_t>(s)], gK2, gb2);
    dz1[static_cast<size_t>(s)] = nn::relu_backward(c.z1, dA1);
  }
  grad_slot(g, P + "conv2.b", gb2.size(), 1) += gb2;

  auto dy1 = bn_backward_named(w, P + "bn1", cache.bn1, dz1, g);

  MatrixXd& gK1 = grad_slot(g, P + "conv1.K", K1.rows(), K1.cols());
  VectorXd gb1 = VectorXd::Zero(K1.rows());
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.acoustic[static_cast<size_t>(s)];
    nn::conv2d_backward(K1, c.c1, Wskip.cols(), dy1[static_cast<size_t>(s)], gK1, gb1);
  }
  grad_slot(g, P + "conv1.b", gb1.size(), 1) += gb1;
  (void)spec;
  return g;
}

std::vector<MatrixXd> motion_frame_forward(ModelWeights& w, const std::vector<ModelInput>& inputs,
                                           int n_frames, BatchCache* cache,
                                           const std::string& P) {
  if (n_frames < 1) throw ArgumentError("frame count must be positive");
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const VectorXd b1 = bias(w, P + "conv1.b");
  const VectorXd b2 = bias(w, P + "conv2.b");
  const auto B = static_cast<Eigen::Index>(inputs.size());

  std::vector<AttentionSampleCache> sc(static_cast<size_t>(B));
  std::vector<MatrixXd> frames(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const MatrixXd& img = inputs[static_cast<size_t>(s)].imu_image;
    if (img.rows() != 6) throw ArgumentError("IMU image must have 6 rows");
    if (img.cols() < 1 || img.cols() % n_frames != 0)
      throw ArgumentError("IMU image with " + std::to_string(img.cols()) +
                          " columns does not divide into " + std::to_string(n_frames) +
                          " frames");
    const Eigen::Index width = img.cols() / n_frames;
    auto& c = sc[static_cast<size_t>(s)];
    c.c1.resize(6);
    c.c2.resize(6);
    c.y1.resize(6);
    c.y2.resize(6);
    c.cols = img.cols();
    MatrixXd f = MatrixXd::Zero(K2.rows(), n_frames);
    for (Eigen::Index r = 0; r < 6; ++r) {
      MatrixXd x = img.row(r);
      MatrixXd a2 = channel_conv_forward(K1, b1, K2, b2, x, c, static_cast<size_t>(r));
      for (Eigen::Index fr = 0; fr < n_frames; ++fr)
        f.col(fr) += a2.middleCols(fr * width, width).rowwise().sum();
    }
    frames[static_cast<size_t>(s)] = f / (6.0 * static_cast<double>(width));
  }
  if (cache) cache->attention = std::move(sc);
  return frames;
}

GradMap motion_frame_backward(const ModelWeights& w, const BatchCache& cache,
                              const std::vector<MatrixXd>& d_frames, int n_frames,
                              const std::string& P) {
  GradMap g;
  const auto B = static_cast<Eigen::Index>(cache.attention.size());
  if (d_frames.size() != static_cast<size_t>(B))
    throw ArgumentError("frame gradient count does not match the cached batch");
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  MatrixXd& gK1 = grad_slot(g, P + "conv1.K", K1.rows(), K1.cols());
  MatrixXd& gK2 = grad_slot(g, P + "conv2.K", K2.rows(), K2.cols());
  VectorXd gb1 = VectorXd::Zero(K1.rows()), gb2 = VectorXd::Zero(K2.rows());

  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.attention[static_cast<size_t>(s)];
    const Eigen::Index width = c.cols / n_frames;
    const MatrixXd& dF = d_frames[static_cast<size_t>(s)];
    MatrixXd dA2(K2.rows(), c.cols);
    for (Eigen::Index fr = 0; fr < n_frames; ++fr)
      dA2.middleCols(fr * width, width) =
          (dF.col(fr) / (6.0 * static_cast<double>(width))).replicate(1, width);
    for (Eigen::Index r = 0; r < 6; ++r)
      channel_conv_backward(K1, K2, c, static_cast<size_t>(r), dA2, gK1, gb1, gK2, gb2);
  }
  grad_slot(g, P + "conv1.b", gb1.size(), 1) += gb1;
  grad_slot(g, P + "conv2.b", gb2.size(), 1) += gb2;
  return g;
}

namespace {

MatrixXd acoustic_forward(const ModelSpec& spec, ModelWeights& w,
                          const std::vector<ModelInput>& inputs, bool training, BatchCache* cache,
                          const std::string& P) {
  auto seqs = acoustic_sequence_forward(spec, w, inputs, training, cache, P);
  const auto B = static_cast<Eigen::Index>(seqs.size());
  MatrixXd h_last(seqs.front().rows(), B);
  for (Eigen::Index s = 0; s < B; ++s) {
    const MatrixXd& hs = seqs[static_cast<size_t>(s)];
    h_last.col(s) = hs.col(hs.cols() - 1);
  }

  MatrixXd pre1 = nn::dense_forward(tensor(w, P + "fc1.W"), bias(w, P + "fc1.b"), h_last);
  MatrixXd a_fc1 = nn::relu(pre1);
  MatrixXd pre2 = nn::dense_forward(tensor(w, P + "fc2.W"), bias(w, P + "fc2.b"), a_fc1);
  MatrixXd emb = nn::relu(pre2);
  if (cache) {
    cache->trunk_in1 = std::move(h_last);
    cache->pre1 = std::move(pre1);
    cache->pre2 = std::move(pre2);
    cache->embeddings = emb;
  }
  return emb;
}

GradMap acoustic_backward(const ModelSpec& spec, const ModelWeights& w, const BatchCache& cache,
                          const MatrixXd& dEmb, const std::string& P) {
  GradMap g;
  const auto B = static_cast<Eigen::Index>(cache.acoustic.size());

  MatrixXd dpre2 = nn::relu_backward(cache.pre2, dEmb);
  MatrixXd dafc1 = dense_backward_named(w, P + "fc2", nn::relu(cache.pre1), dpre2, g);
  MatrixXd dpre1 = nn::relu_backward(cache.pre1, dafc1);
  MatrixXd dh_last = dense_backward_named(w, P + "fc1", cache.trunk_in1, dpre1, g);

  std::vector<MatrixXd> d_seq(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const Eigen::Index T = cache.acoustic[static_cast<size_t>(s)].lstm.x.cols();
    d_seq[static_cast<size_t>(s)] = MatrixXd::Zero(dh_last.rows(), T);
    d_seq[static_cast<size_t>(s)].col(T - 1) = dh_last.col(s);
  }
  accumulate_grads(g, acoustic_sequence_backward(spec, w, cache, d_seq, P));
  return g;
}

// ---------------------------------------------------------------------------
// scnnb: the IMU energy strip as a 1-channel 6 x L image through two
// conv/batchnorm/ReLU/maxpool blocks, flattened into one dense embedding.
// ---------------------------------------------------------------------------

MatrixXd flatten_rows(const MatrixXd& X) {
  MatrixXd out(static_cast<Eigen::Index>(X.size()), 1);
  for (Eigen::Index c = 0; c < X.rows(); ++c)
    out.col(0).segment(c * X.cols(), X.cols()) = X.row(c).transpose();
  return out;
}

MatrixXd scnnb_forward(const ModelSpec& spec, ModelWeights& w,
                       const std::vector<ModelInput>& inputs, bool training, BatchCache* cache,
                       const std::string& P) {
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const VectorXd b1 = bias(w, P + "conv1.b");
  const VectorXd b2 = bias(w, P + "conv2.b");
  const int L = spec.imu_len;
  const auto B = static_cast<Eigen::Index>(inputs.size());

  std::vector<ScnnbSampleCache> sc(static_cast<size_t>(B));
  std::vector<MatrixXd> y1(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const MatrixXd& img = inputs[static_cast<size_t>(s)].imu_image;
    if (img.rows() != 6) throw ArgumentError("IMU image must have 6 rows");
    if (img.cols() != L)
      throw ArgumentError("IMU image has " + std::to_string(img.cols()) +
                          " columns, model expects " + std::to_string(L));
    MatrixXd x1(1, 6 * L);
    for (Eigen::Index r = 0; r < 6; ++r) x1.block(0, r * L, 1, L) = img.row(r);
    nn::ConvDims d{6, L, 3, 3, 1, 1};
    y1[static_cast<size_t>(s)] = nn::conv2d_forward(K1, b1, x1, d, &sc[static_cast<size_t>(s)].c1);
  }
  nn::BatchNormCache<double> bn1_local;
  auto z1 = bn_forward_named(w, P + "bn1", y1, training, cache ? &cache->bn1 : &bn1_local);

  const int w1 = L / 2;
  std::vector<MatrixXd> y2(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    auto& c = sc[static_cast<size_t>(s)];
    c.z1 = z1[static_cast<size_t>(s)];
    MatrixXd pooled = nn::maxpool2x2_forward(nn::relu(c.z1), 6, L, &c.p1);
    nn::ConvDims d{3, w1, 3, 3, 1, 1};
    y2[static_cast<size_t>(s)] = nn::conv2d_forward(K2, b2, pooled, d, &c.c2);
  }
  nn::BatchNormCache<double> bn2_local;
  auto z2 = bn_forward_named(w, P + "bn2", y2, training, cache ? &cache->bn2 : &bn2_local);

  const int w2 = w1 / 2;
  MatrixXd flat(K2.rows() * w2, B);
  for (Eigen::Index s = 0; s < B; ++s) {
    auto& c = sc[static_cast<size_t>(s)];
    c.z2 = z2[static_cast<size_t>(s)];
    MatrixXd pooled = nn::maxpool2x2_forward(nn::relu(c.z2), 3, w1, &c.p2);
    flat.col(s) = flatten_rows(pooled);
  }

  MatrixXd pre1 = nn::dense_forward(tensor(w, P + "fc1.W"), bias(w, P + "fc1.b"), flat);
  MatrixXd emb = nn::relu(pre1);
  if (cache) {
    cache->scnnb = std::move(sc);
    cache->trunk_in1 = std::move(flat);
    cache->pre1 = std::move(pre1);
    cache->embeddings = emb;
  }
  return emb;
}

GradMap scnnb_backward(const ModelSpec& spec, const ModelWeights& w, const BatchCache& cache,
                       const MatrixXd& dEmb, const std::string& P) {
  GradMap g;
  const auto B = static_cast<Eigen::Index>(cache.scnnb.size());
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const int L = spec.imu_len;
  const int w1 = L / 2, w2 = w1 / 2;

  MatrixXd dpre1 = nn::relu_backward(cache.pre1, dEmb);
  MatrixXd dflat = dense_backward_named(w, P + "fc1", cache.trunk_in1, dpre1, g);

  MatrixXd& gK2 = grad_slot(g, P + "conv2.K", K2.rows(), K2.cols());
  VectorXd gb2 = VectorXd::Zero(K2.rows());
  std::vector<MatrixXd> dz1(static_cast<size_t>(B));
  std::vector<MatrixXd> dz2(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.scnnb[static_cast<size_t>(s)];
    MatrixXd dPooled2(K2.rows(), w2);
    for (Eigen::Index ch = 0; ch < K2.rows(); ++ch)
      dPooled2.row(ch) = dflat.col(s).segment(ch * w2, w2).transpose();
    MatrixXd dA2 = nn::maxpool2x2_backward(c.p2, K2.rows(), dPooled2);
    dz2[static_cast<size_t>(s)] = nn::relu_backward(c.z2, dA2);
  }
  auto dy2 = bn_backward_named(w, P + "bn2", cache.bn2, dz2, g);
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.scnnb[static_cast<size_t>(s)];
    MatrixXd dPooled1 = nn::conv2d_backward(K2, c.c2, K1.rows(), dy2[static_cast<size_t>(s)], gK2, gb2);
    MatrixXd dA1 = nn::maxpool2x2_backward(c.p1, K1.rows(), dPooled1);
    dz1[static_cast<size_t>(s)] = nn::relu_backward(c.z1, dA1);
  }
  grad_slot(g, P + "conv2.b", gb2.size(), 1) += gb2;

  auto dy1 = bn_backward_named(w, P + "bn1", cache.bn1, dz1, g);
  MatrixXd& gK1 = grad_slot(g, P + "conv1.K", K1.rows(), K1.cols());
  VectorXd gb1 = VectorXd::Zero(K1.rows());
  for (Eigen::Index s = 0; s < B; ++s)
    nn::conv2d_backward(K1, cache.scnnb[static_cast<size_t>(s)].c1, 1,
                        dy1[static_cast<size_t>(s)], gK1, gb1);
  grad_slot(g, P + "conv1.b", gb1.size(), 1) += gb1;
  return g;
}

// ---------------------------------------------------------------------------
// cnn_attention: a conv stack shared across the six IMU channels turns each
// channel into one token; self-attention mixes the tokens, mean pooling and
// a dense layer produce the embedding.
// ---------------------------------------------------------------------------

MatrixXd attention_model_forward(const ModelSpec& spec, ModelWeights& w,
                                 const std::vector<ModelInput>& inputs, bool training,
                                 BatchCache* cache, const std::string& P) {
  (void)training;  // no batch-dependent layers in this trunk
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const VectorXd b1 = bias(w, P + "conv1.b");
  const VectorXd b2 = bias(w, P + "conv2.b");
  const auto aw = attention_weights(w, P);
  const auto B = static_cast<Eigen::Index>(inputs.size());
  const Eigen::Index ch = K1.rows();

  std::vector<AttentionSampleCache> sc(static_cast<size_t>(B));
  MatrixXd pooled(aw.Wv.rows(), B);
  for (Eigen::Index s = 0; s < B; ++s) {
    const MatrixXd& img = inputs[static_cast<size_t>(s)].imu_image;
    if (img.rows() != 6) throw ArgumentError("IMU image must have 6 rows");
    if (img.cols() < 1) throw ArgumentError("empty IMU image");
    const auto L = static_cast<int>(img.cols());
    auto& c = sc[static_cast<size_t>(s)];
    c.c1.resize(6);
    c.c2.resize(6);
    c.y1.resize(6);
    c.y2.resize(6);
    c.cols = L;
    MatrixXd tokens(ch, 6);
    for (Eigen::Index r = 0; r < 6; ++r) {
      MatrixXd x = img.row(r);
      tokens.col(r) =
          nn::mean_pool_cols(channel_conv_forward(K1, b1, K2, b2, x, c, static_cast<size_t>(r)));
    }
    MatrixXd mixed = nn::attention_forward(aw, tokens, tokens, &c.attn);
    pooled.col(s) = nn::mean_pool_cols(mixed);
  }

  MatrixXd pre1 = nn::dense_forward(tensor(w, P + "fc1.W"), bias(w, P + "fc1.b"), pooled);
  MatrixXd emb = nn::relu(pre1);
  if (cache) {
    cache->attention = std::move(sc);
    cache->trunk_in1 = std::move(pooled);
    cache->pre1 = std::move(pre1);
    cache->embeddings = emb;
  }
  (void)spec;
  return emb;
}

GradMap attention_model_backward(const ModelSpec& spec, const ModelWeights& w,
                                 const BatchCache& cache, const MatrixXd& dEmb,
                                 const std::string& P) {
  GradMap g;
  const auto B = static_cast<Eigen::Index>(cache.attention.size());
  const MatrixXd& K1 = tensor(w, P + "conv1.K");
  const MatrixXd& K2 = tensor(w, P + "conv2.K");
  const auto aw = attention_weights(w, P);

  MatrixXd dpre1 = nn::relu_backward(cache.pre1, dEmb);
  MatrixXd dpooled = dense_backward_named(w, P + "fc1", cache.trunk_in1, dpre1, g);

  MatrixXd& gWq = grad_slot(g, P + "attn.Wq", aw.Wq.rows(), aw.Wq.cols());
  MatrixXd& gWk = grad_slot(g, P + "attn.Wk", aw.Wk.rows(), aw.Wk.cols());
  MatrixXd& gWv = grad_slot(g, P + "attn.Wv", aw.Wv.rows(), aw.Wv.cols());
  MatrixXd& gK1 = grad_slot(g, P + "conv1.K", K1.rows(), K1.cols());
  MatrixXd& gK2 = grad_slot(g, P + "conv2.K", K2.rows(), K2.cols());
  VectorXd gbq = VectorXd::Zero(aw.bq.size()), gbk = VectorXd::Zero(aw.bk.size()),
           gbv = VectorXd::Zero(aw.bv.size());
  VectorXd gb1 = VectorXd::Zero(K1.rows()), gb2 = VectorXd::Zero(K2.rows());

  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& c = cache.attention[static_cast<size_t>(s)];
    MatrixXd dMixed = nn::mean_pool_cols_backward(VectorXd(dpooled.col(s)), 6);
    auto ag = nn::attention_backward(aw, c.attn, dMixed);
    gWq += ag.dWq;
    gWk += ag.dWk;
    gWv += ag.dWv;
    gbq += ag.dbq;
    gbk += ag.dbk;
    gbv += ag.dbv;
    MatrixXd dTokens = ag.dXq + ag.dXkv;
    for (Eigen::Index r = 0; r < 6; ++r) {
      MatrixXd dA2 = nn::mean_pool_cols_backward(VectorXd(dTokens.col(r)), c.cols);
      channel_conv_backward(K1, K2, c, static_cast<size_t>(r), dA2, gK1, gb1, gK2, gb2);
    }
  }
  grad_slot(g, P + "attn.bq", gbq.size(), 1) += gbq;
  grad_slot(g, P + "attn.bk", gbk.size(), 1) += gbk;
  grad_slot(g, P + "attn.bv", gbv.size(), 1) += gbv;
  grad_slot(g, P + "conv1.b", gb1.size(), 1) += gb1;
  grad_slot(g, P + "conv2.b", gb2.size(), 1) += gb2;
  (void)spec;
  return g;
}

void add_batchnorm(ModelWeights& w, const std::string& name, Eigen::Index channels) {
  w.tensors[name + ".gamma"] = MatrixXd::Ones(channels, 1);
  w.tensors[name + ".beta"] = MatrixXd::Zero(channels, 1);
  w.tensors[name + ".running_mean"] = MatrixXd::Zero(channels, 1);
  w.tensors[name + ".running_var"] = MatrixXd::Ones(channels, 1);
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pure_acoustic: return "pure_acoustic";
    case ModelKind::scnnb: return "scnnb";
    case ModelKind::cnn_attention: return "cnn_attention";
  }
  throw ArgumentError("unknown model kind");
}

ModelKind model_kind_from_string(const std::string& text) {
  if (text == "pure_acoustic") return ModelKind::pure_acoustic;
  if (text == "scnnb") return ModelKind::scnnb;
  if (text == "cnn_attention") return ModelKind::cnn_attention;
  throw ArgumentError("unknown model kind: " + text);
}

ModelSpec ModelSpec::reference(ModelKind kind) {
  ModelSpec s;
  s.kind = kind;
  switch (kind) {
    case ModelKind::pure_acoustic:
      // Defaults already describe this preset.
      break;
    case ModelKind::scnnb:
      s.conv1_out = 8;
      s.conv2_out = 16;
      s.conv_kernel = 3;
      s.embed_dim = 64;
      break;
    case ModelKind::cnn_attention:
      s.conv1_out = 16;
      s.conv2_out = 16;
      s.attn_dim = 16;
      s.embed_dim = 32;
      break;
  }
  return s;
}

ModelSpec ModelSpec::compact(ModelKind kind) {
  ModelSpec s = reference(kind);
  switch (kind) {
    case ModelKind::pure_acoustic:
      s.conv1_out = 24;
      s.conv2_out = 16;
      s.conv_kernel = 3;
      s.skip_proj = 8;
      s.lstm_hidden = 32;
      s.fc1_dim = 48;
      s.embed_dim = 32;
      break;
    case ModelKind::scnnb:
      s.conv1_out = 4;
      s.conv2_out = 8;
      s.embed_dim = 32;
      break;
    case ModelKind::cnn_attention:
      break;  // the reference preset is already small
  }
  return s;
}

std::string ModelSpec::to_json() const {
  json j{{"kind", models::to_string(kind)},
         {"conv1_out", conv1_out},
         {"conv2_out", conv2_out},
         {"conv_kernel", conv_kernel},
         {"skip_proj", skip_proj},
         {"lstm_hidden", lstm_hidden},
         {"fc1_dim", fc1_dim},
         {"attn_dim", attn_dim},
         {"embed_dim", embed_dim},
         {"imu_len", imu_len}};
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad model spec JSON: ") + e.what());
  }
  if (!j.contains("kind")) throw IoError("model spec JSON lacks \"kind\"");
  ModelSpec s = reference(model_kind_from_string(j.at("kind").get<std::string>()));
  s.conv1_out = j.value("conv1_out", s.conv1_out);
  s.conv2_out = j.value("conv2_out", s.conv2_out);
  s.conv_kernel = j.value("conv_kernel", s.conv_kernel);
  s.skip_proj = j.value("skip_proj", s.skip_proj);
  s.lstm_hidden = j.value("lstm_hidden", s.lstm_hidden);
  s.fc1_dim = j.value("fc1_dim", s.fc1_dim);
  s.attn_dim = j.value("attn_dim", s.attn_dim);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.imu_len = j.value("imu_len", s.imu_len);
  s.validate();
  return s;
}

void ModelSpec::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw ValidationError(std::string(what) + " must be positive");
  };
  positive(conv1_out, "conv1_out");
  positive(conv2_out, "conv2_out");
  positive(embed_dim, "embed_dim");
  if (kind == ModelKind::pure_acoustic) {
    positive(conv_kernel, "conv_kernel");
    if (conv_kernel % 2 == 0) throw ValidationError("conv_kernel must be odd");
    positive(skip_proj, "skip_proj");
    positive(lstm_hidden, "lstm_hidden");
    positive(fc1_dim, "fc1_dim");
  }
  if (kind == ModelKind::scnnb) {
    if (imu_len < 4) throw ValidationError("imu_len must be at least 4");
  }
  if (kind == ModelKind::cnn_attention) positive(attn_dim, "attn_dim");
}

ModelInput make_model_input(const dsp::SegmentFeatures& features) {
  ModelInput input;
  input.spectrogram = features.spectrogram;
  if (features.imu_energy.empty()) throw ArgumentError("segment carries no IMU energy frames");
  const Eigen::Index per = features.imu_energy.front().cols();
  input.imu_image.resize(6, per * static_cast<Eigen::Index>(features.imu_energy.size()));
  for (size_t f = 0; f < features.imu_energy.size(); ++f) {
    const MatrixXd& frame = features.imu_energy[f];
    if (frame.rows() != 6 || frame.cols() != per)
      throw ArgumentError("inconsistent IMU energy frame shapes");
    input.imu_image.block(0, static_cast<Eigen::Index>(f) * per, 6, per) = frame;
  }
  return input;
}

TrainSample make_train_sample(const dsp::SegmentFeatures& features) {
  TrainSample sample;
  sample.input = make_model_input(features);
  sample.label = static_cast<int>(features.label);
  sample.group_id = features.session_ref;
  return sample;
}

void ModelWeights::apply_masks() {
  for (const auto& [name, mask] : masks) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("mask for unknown tensor: " + name);
    if (mask.rows() != it->second.rows() || mask.cols() != it->second.cols())
      throw ValidationError("mask shape mismatch for tensor: " + name);
    it->second = it->second.cwiseProduct(mask);
  }
}

ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelWeights w;
  auto weight = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    Eigen::Index fan_in) {
    w.tensors[name] = uniform_tensor(rows, cols, fan_in, seed, name);
  };
  auto zero_bias = [&](const std::string& name, Eigen::Index rows) {
    w.tensors[name] = MatrixXd::Zero(rows, 1);
  };
  // Dense stages feed ReLUs whose inputs start near zero; a small positive
  // bias keeps those units initially active instead of gradient-dead.
  auto relu_bias = [&](const std::string& name, Eigen::Index rows) {
    w.tensors[name] = MatrixXd::Constant(rows, 1, 0.05);
  };

  switch (spec.kind) {
    case ModelKind::pure_acoustic: {
      const int bands = dsp::kSpectrogramBands;
      const int k = spec.conv_kernel;
      weight("conv1.K", spec.conv1_out, bands * k, bands * k);
      zero_bias("conv1.b", spec.conv1_out);
      add_batchnorm(w, "bn1", spec.conv1_out);
      weight("conv2.K", spec.conv2_out, spec.conv1_out * k, spec.conv1_out * k);
      zero_bias("conv2.b", spec.conv2_out);
      add_batchnorm(w, "bn2", spec.conv2_out);
      weight("skip.W", spec.skip_proj, bands, bands);
      zero_bias("skip.b", spec.skip_proj);
      const int lstm_in = spec.conv2_out + spec.skip_proj;
      const int H = spec.lstm_hidden;
      weight("lstm.W", 4 * H, lstm_in, lstm_in);
      weight("lstm.U", 4 * H, H, H);
      MatrixXd lb = MatrixXd::Zero(4 * H, 1);
      lb.block(H, 0, H, 1).setOnes();  // open the forget gate at the start
      w.tensors["lstm.b"] = lb;
      weight("fc1.W", spec.fc1_dim, H, H);
      relu_bias("fc1.b", spec.fc1_dim);
      weight("fc2.W", spec.embed_dim, spec.fc1_dim, spec.fc1_dim);
      relu_bias("fc2.b", spec.embed_dim);
      break;
    }
    case ModelKind::scnnb: {
      weight("conv1.K", spec.conv1_out, 9, 9);
      zero_bias("conv1.b", spec.conv1_out);
      add_batchnorm(w, "bn1", spec.conv1_out);
      weight("conv2.K", spec.conv2_out, spec.conv1_out * 9, spec.conv1_out * 9);
      zero_bias("conv2.b", spec.conv2_out);
      add_batchnorm(w, "bn2", spec.conv2_out);
      const int flat = spec.conv2_out * (spec.imu_len / 2 / 2);
      weight("fc1.W", spec.embed_dim, flat, flat);
      relu_bias("fc1.b", spec.embed_dim);
      break;
    }
    case ModelKind::cnn_attention: {
      // These convs feed ReLUs directly (no batchnorm to absorb a bias),
      // so they get the same keep-alive bias as the dense stages.
      weight("conv1.K", spec.conv1_out, 7, 7);
      relu_bias("conv1.b", spec.conv1_out);
      weight("conv2.K", spec.conv2_out, spec.conv1_out * 5, spec.conv1_out * 5);
      relu_bias("conv2.b", spec.conv2_out);
      weight("attn.Wq", spec.attn_dim, spec.conv2_out, spec.conv2_out);
      weight("attn.Wk", spec.attn_dim, spec.conv2_out, spec.conv2_out);
      weight("attn.Wv", spec.attn_dim, spec.conv2_out, spec.conv2_out);
      zero_bias("attn.bq", spec.attn_dim);
      zero_bias("attn.bk", spec.attn_dim);
      zero_bias("attn.bv", spec.attn_dim);
      weight("fc1.W", spec.embed_dim, spec.attn_dim, spec.attn_dim);
      relu_bias("fc1.b", spec.embed_dim);
      break;
    }
  }
  weight("head.W", kNumClasses, spec.embed_dim, spec.embed_dim);
  zero_bias("head.b", kNumClasses);
  return w;
}

std::size_t param_count(const ModelWeights& weights) {
  std::size_t n = 0;
  for (const auto& [name, t] : weights.tensors)
    if (name.find("running") == std::string::npos) n += static_cast<std::size_t>(t.size());
  return n;
}

std::size_t param_count(const ModelSpec& spec) { return param_count(init_weights(spec, 0)); }

MatrixXd trunk_forward(const ModelSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training, BatchCache* cache,
                       const std::string& prefix) {
  if (inputs.empty()) throw ArgumentError("empty batch");
  switch (spec.kind) {
    case ModelKind::pure_acoustic:
      return acoustic_forward(spec, weights, inputs, training, cache, prefix);
    case ModelKind::scnnb:
      return scnnb_forward(spec, weights, inputs, training, cache, prefix);
    case ModelKind::cnn_attention:
      return attention_model_forward(spec, weights, inputs, training, cache, prefix);
  }
  throw ArgumentError("unknown model kind");
}

GradMap trunk_backward(const ModelSpec& spec, const ModelWeights& weights, const BatchCache& cache,
                       const MatrixXd& d_embeddings, const std::string& prefix) {
  switch (spec.kind) {
    case ModelKind::pure_acoustic:
      return acoustic_backward(spec, weights, cache, d_embeddings, prefix);
    case ModelKind::scnnb:
      return scnnb_backward(spec, weights, cache, d_embeddings, prefix);
    case ModelKind::cnn_attention:
      return attention_model_backward(spec, weights, cache, d_embeddings, prefix);
  }
  throw ArgumentError("unknown model kind");
}

MatrixXd forward_batch(const ModelSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training, BatchCache* cache) {
  MatrixXd emb = trunk_forward(spec, weights, inputs, training, cache);
  return nn::dense_forward(tensor(weights, "head.W"), bias(weights, "head.b"), emb);
}

GradMap backward_batch(const ModelSpec& spec, const ModelWeights& weights, const BatchCache& cache,
                       const MatrixXd& d_logits) {
  GradMap g;
  MatrixXd dEmb = dense_backward_named(weights, "head", cache.embeddings, d_logits, g);
  accumulate_grads(g, trunk_backward(spec, weights, cache, dEmb));
  return g;
}

MatrixXd infer_logits(const ModelSpec& spec, const ModelWeights& weights,
                      const std::vector<ModelInput>& inputs) {
  ModelWeights local = weights;  // inference leaves the caller's state alone
  return forward_batch(spec, local, inputs, false);
}

std::vector<int> predict(const ModelSpec& spec, const ModelWeights& weights,
                         const std::vector<ModelInput>& inputs) {
  MatrixXd logits = infer_logits(spec, weights, inputs);
  std::vector<int> out(static_cast<size_t>(logits.cols()));
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Eigen::Index best = 0;
    logits.col(c).maxCoeff(&best);
    out[static_cast<size_t>(c)] = static_cast<int>(best);
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be non-negative");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (early_stop_patience < 0) throw ValidationError("early_stop_patience must be non-negative");
}

namespace {

// Mean eval-mode loss over the indexed samples, scored in chunks of 32.
double chunked_eval_loss(const std::vector<TrainSample>& samples, const std::vector<size_t>& idx,
                         ModelWeights& weights, const BatchFn& eval_batch) {
  double total = 0.0;
  size_t done = 0;
  while (done < idx.size()) {
    const size_t take = std::min<size_t>(32, idx.size() - done);
    std::vector<ModelInput> inputs;
    std::vector<int> labels;
    inputs.reserve(take);
    for (size_t i = 0; i < take; ++i) {
      inputs.push_back(samples[idx[done + i]].input);
      labels.push_back(samples[idx[done + i]].label);
    }
    total += eval_batch(weights, inputs, labels) * static_cast<double>(take);
    done += take;
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train_loop(const std::vector<TrainSample>& samples, const TrainConfig& config,
                       ModelWeights initial, const BatchFn& train_step,
                       const BatchFn& eval_batch) {
  config.validate();
  if (samples.empty()) throw ArgumentError("no training samples");

  std::array<bool, kNumClasses> seen{};
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= kNumClasses)
      throw ArgumentError("label out of range: " + std::to_string(s.label));
    seen[static_cast<size_t>(s.label)] = true;
  }
  for (int c = 0; c < kNumClasses; ++c)
    if (!seen[static_cast<size_t>(c)])
      throw ValidationError(std::string("training data lacks class ") +
                            convsense::to_string(static_cast<ClassLabel>(c)));

  std::set<std::string> group_set;
  for (const auto& s : samples) group_set.insert(s.group_id);
  std::vector<std::string> groups(group_set.begin(), group_set.end());

  TrainResult result;
  const bool use_holdout = config.early_stop_patience > 0 && groups.size() >= 2;
  std::set<std::string> holdout;
  if (use_holdout) {
    const auto n_hold = std::max<size_t>(
        1, static_cast<size_t>(std::floor(0.1 * static_cast<double>(groups.size()))));
    auto rng = make_rng(config.seed, "holdout");
    std::shuffle(groups.begin(), groups.end(), rng);
    holdout.insert(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_hold));
    result.holdout_groups.assign(holdout.begin(), holdout.end());
  }

  std::vector<size_t> train_idx, hold_idx;
  for (size_t i = 0; i < samples.size(); ++i)
    (holdout.count(samples[i].group_id) ? hold_idx : train_idx).push_back(i);

  ModelWeights weights = std::move(initial);
  weights.apply_masks();
  auto batch_rng = make_rng(config.seed, "batching");

  ModelWeights best_weights = weights;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), batch_rng);
    double loss_sum = 0.0;
    size_t n_seen = 0;
    for (size_t start = 0; start < train_idx.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t take = std::min<size_t>(static_cast<size_t>(config.batch_size),
                                           train_idx.size() - start);
      std::vector<ModelInput> inputs;
      std::vector<int> labels;
      inputs.reserve(take);
      for (size_t i = 0; i < take; ++i) {
        inputs.push_back(samples[train_idx[start + i]].input);
        labels.push_back(samples[train_idx[start + i]].label);
      }
      loss_sum += train_step(weights, inputs, labels) * static_cast<double>(take);
      n_seen += take;
    }
    result.train_loss.push_back(n_seen ? loss_sum / static_cast<double>(n_seen) : 0.0);

    if (use_holdout) {
      const double hl = chunked_eval_loss(samples, hold_idx, weights, eval_batch);
      result.holdout_loss.push_back(hl);
      if (hl < best_loss - 1e-12) {
        best_loss = hl;
        best_weights = weights;
        result.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= config.early_stop_patience) {
        break;
      }
    }
  }

  result.weights = (use_holdout && result.best_epoch >= 0) ? best_weights : weights;
  return result;
}

TrainResult train_model(const ModelSpec& spec, const std::vector<TrainSample>& samples,
                        const TrainConfig& config) {
  spec.validate();
  config.validate();
  const double lr = config.learning_rate;
  auto step = [&spec, lr](ModelWeights& w, const std::vector<ModelInput>& inputs,
                          const std::vector<int>& labels) {
    BatchCache cache;
    MatrixXd logits = forward_batch(spec, w, inputs, true, &cache);
    const double loss = nn::cross_entropy(logits, labels);
    GradMap grads = backward_batch(spec, w, cache, nn::cross_entropy_backward(logits, labels));
    for (const auto& [name, grad] : grads) w.tensors.at(name) -= lr * grad;
    w.apply_masks();
    return loss;
  };
  auto eval = [&spec](ModelWeights& w, const std::vector<ModelInput>& inputs,
                      const std::vector<int>& labels) {
    return nn::cross_entropy(forward_batch(spec, w, inputs, false), labels);
  };
  return train_loop(samples, config, init_weights(spec, config.seed), step, eval);
}

}  // namespace convsense::models
