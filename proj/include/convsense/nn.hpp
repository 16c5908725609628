#pragma once

#include "convsense/types.hpp"

#include <cmath>
#include <vector>

// Layer primitives as expression-friendly free functions. Every forward has
// a matching backward; training runs in 64-bit, inference also instantiates
// with float. Feature maps are matrices with channels as rows: a 2-D map of
// C channels over an HxW grid is (C x H*W) with row-major spatial indexing,
// and a sequence of T steps is (C x T). Batches are std::vectors of samples.
namespace convsense::nn {

// ---------------------------------------------------------------- dense ---

template <typename S>
Matrix<S> dense_forward(const Matrix<S>& W, const Vector<S>& b, const Matrix<S>& X) {
  return (W * X).colwise() + b;
}

// Accumulates parameter gradients; returns the input gradient.
template <typename S>
Matrix<S> dense_backward(const Matrix<S>& W, const Matrix<S>& X, const Matrix<S>& dY,
                         Matrix<S>& dW, Vector<S>& db) {
  dW += dY * X.transpose();
  db += dY.rowwise().sum();
  return W.transpose() * dY;
}

// ----------------------------------------------------------- activation ---

template <typename S>
Matrix<S> relu(const Matrix<S>& X) {
  return X.cwiseMax(S(0));
}

template <typename S>
Matrix<S> relu_backward(const Matrix<S>& pre, const Matrix<S>& dY) {
  return ((pre.array() > S(0)).template cast<S>() * dY.array()).matrix();
}

// Column-wise softmax with max subtraction for stability.
template <typename S>
Matrix<S> softmax_cols(const Matrix<S>& logits) {
  Matrix<S> out(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    Vector<S> e = (logits.col(c).array() - logits.col(c).maxCoeff()).exp();
    out.col(c) = e / e.sum();
  }
  return out;
}

// Mean cross-entropy over the batch (columns = samples).
template <typename S>
S cross_entropy(const Matrix<S>& logits, const std::vector<int>& labels) {
  if (static_cast<size_t>(logits.cols()) != labels.size())
    throw ArgumentError("cross_entropy: batch size mismatch");
  const Matrix<S> p = softmax_cols(logits);
  S loss = S(0);
  for (Eigen::Index c = 0; c < logits.cols(); ++c)
    loss -= std::log(std::max(p(labels[static_cast<size_t>(c)], c), S(1e-300)));
  return loss / static_cast<S>(logits.cols());
}

// d(mean cross-entropy)/d(logits) = (softmax - onehot) / batch.
template <typename S>
Matrix<S> cross_entropy_backward(const Matrix<S>& logits, const std::vector<int>& labels) {
  Matrix<S> d = softmax_cols(logits);
  for (Eigen::Index c = 0; c < logits.cols(); ++c)
    d(labels[static_cast<size_t>(c)], c) -= S(1);
  return d / static_cast<S>(logits.cols());
}

// -------------------------------------------------------------- conv 2d ---
// Kernel layout: (C_out x C_in*KH*KW), row-major over (c_in, kh, kw).
// A 1-D convolution over a length-T sequence is the H=1, KH=1 case.

struct ConvDims {
  int h = 1, w = 1;    // input spatial dims
  int kh = 1, kw = 1;  // kernel dims
  int pad_h = 0, pad_w = 0;
  int out_h() const { return h + 2 * pad_h - kh + 1; }
  int out_w() const { return w + 2 * pad_w - kw + 1; }
};

template <typename S>
Matrix<S> im2col(const Matrix<S>& X, const ConvDims& d) {
  const auto c_in = X.rows();
  Matrix<S> P = Matrix<S>::Zero(c_in * d.kh * d.kw,
                                static_cast<Eigen::Index>(d.out_h()) * d.out_w());
  for (Eigen::Index c = 0; c < c_in; ++c)
    for (int kh = 0; kh < d.kh; ++kh)
      for (int kw = 0; kw < d.kw; ++kw) {
        const Eigen::Index prow = (c * d.kh + kh) * d.kw + kw;
        for (int oh = 0; oh < d.out_h(); ++oh) {
          const int ih = oh + kh - d.pad_h;
          if (ih < 0 || ih >= d.h) continue;
          for (int ow = 0; ow < d.out_w(); ++ow) {
            const int iw = ow + kw - d.pad_w;
            if (iw < 0 || iw >= d.w) continue;
            P(prow, static_cast<Eigen::Index>(oh) * d.out_w() + ow) =
                X(c, static_cast<Eigen::Index>(ih) * d.w + iw);
          }
        }
      }
  return P;
}

template <typename S>
Matrix<S> col2im(const Matrix<S>& dP, Eigen::Index c_in, const ConvDims& d) {
  Matrix<S> dX = Matrix<S>::Zero(c_in, static_cast<Eigen::Index>(d.h) * d.w);
  for (Eigen::Index c = 0; c < c_in; ++c)
    for (int kh = 0; kh < d.kh; ++kh)
      for (int kw = 0; kw < d.kw; ++kw) {
        const Eigen::Index prow = (c * d.kh + kh) * d.kw + kw;
        for (int oh = 0; oh < d.out_h(); ++oh) {
          const int ih = oh + kh - d.pad_h;
          if (ih < 0 || ih >= d.h) continue;
          for (int ow = 0; ow < d.out_w(); ++ow) {
            const int iw = ow + kw - d.pad_w;
            if (iw < 0 || iw >= d.w) continue;
            dX(c, static_cast<Eigen::Index>(ih) * d.w + iw) +=
                dP(prow, static_cast<Eigen::Index>(oh) * d.out_w() + ow);
          }
        }
      }
  return dX;
}

template <typename S>
struct ConvCache {
  Matrix<S> patches;  // im2col matrix, kept for the backward pass
  ConvDims dims;
};

template <typename S>
Matrix<S> conv2d_forward(const Matrix<S>& K, const Vector<S>& b, const Matrix<S>& X,
                         const ConvDims& d, ConvCache<S>* cache = nullptr) {
  if (K.cols() != X.rows() * d.kh * d.kw)
    throw ArgumentError("conv2d_forward: kernel does not match input channels");
  Matrix<S> P = im2col(X, d);
  Matrix<S> Y = (K * P).colwise() + b;
  if (cache) {
    cache->patches = std::move(P);
    cache->dims = d;
  }
  return Y;
}

template <typename S>
Matrix<S> conv2d_backward(const Matrix<S>& K, const ConvCache<S>& cache, Eigen::Index c_in,
                          const Matrix<S>& dY, Matrix<S>& dK, Vector<S>& db) {
  dK += dY * cache.patches.transpose();
  db += dY.rowwise().sum();
  return col2im<S>(K.transpose() * dY, c_in, cache.dims);
}

// ------------------------------------------------------------- pooling ----

template <typename S>
struct PoolCache {
  std::vector<Eigen::Index> argmax;  // flat input index per output cell, row-major per channel
  int h = 0, w = 0;
};

// 2x2 max pooling with stride 2; odd trailing rows/cols are dropped.
template <typename S>
Matrix<S> maxpool2x2_forward(const Matrix<S>& X, int h, int w, PoolCache<S>* cache = nullptr) {
  const int h2 = h / 2, w2 = w / 2;
  if (h2 == 0 || w2 == 0) throw ArgumentError("maxpool2x2: input too small");
  Matrix<S> Y(X.rows(), static_cast<Eigen::Index>(h2) * w2);
  if (cache) {
    cache->argmax.assign(static_cast<size_t>(X.rows()) * h2 * w2, 0);
    cache->h = h;
    cache->w = w;
  }
  for (Eigen::Index c = 0; c < X.rows(); ++c)
    for (int oh = 0; oh < h2; ++oh)
      for (int ow = 0; ow < w2; ++ow) {
        S best = X(c, static_cast<Eigen::Index>(2 * oh) * w + 2 * ow);
        Eigen::Index best_idx = static_cast<Eigen::Index>(2 * oh) * w + 2 * ow;
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const Eigen::Index idx = static_cast<Eigen::Index>(2 * oh + dh) * w + (2 * ow + dw);
            if (X(c, idx) > best) {
              best = X(c, idx);
              best_idx = idx;
            }
          }
        Y(c, static_cast<Eigen::Index>(oh) * w2 + ow) = best;
        if (cache)
          cache->argmax[static_cast<size_t>(c) * h2 * w2 + static_cast<size_t>(oh) * w2 + ow] =
              best_idx;
      }
  return Y;
}

template <typename S>
Matrix<S> maxpool2x2_backward(const PoolCache<S>& cache, Eigen::Index channels,
                              const Matrix<S>& dY) {
  const int h2 = cache.h / 2, w2 = cache.w / 2;
  Matrix<S> dX = Matrix<S>::Zero(channels, static_cast<Eigen::Index>(cache.h) * cache.w);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int i = 0; i < h2 * w2; ++i)
      dX(c, cache.argmax[static_cast<size_t>(c) * h2 * w2 + static_cast<size_t>(i)]) += dY(c, i);
  return dX;
}

// ----------------------------------------------------------- batch norm ---
// Per-channel statistics over batch x spatial positions. The batch is a
// vector of (C x HW) maps; gamma/beta/running stats are length C.

template <typename S>
struct BatchNormCache {
  std::vector<Matrix<S>> xhat;
  Vector<S> mean, invstd;
  S count = S(0);
};

inline constexpr double kBatchNormEps = 1e-5;

template <typename S>
std::vector<Matrix<S>> batchnorm_forward(const std::vector<Matrix<S>>& batch,
                                         const Vector<S>& gamma, const Vector<S>& beta,
                                         Vector<S>& running_mean, Vector<S>& running_var,
                                         bool training, S momentum = S(0.1),
                                         BatchNormCache<S>* cache = nullptr) {
  if (batch.empty()) throw ArgumentError("batchnorm_forward: empty batch");
  const auto channels = batch[0].rows();
  Vector<S> mean(channels), var(channels);
  if (training) {
    // Statistics pool every column, so per-sample widths may differ.
    S count = S(0);
    for (const auto& x : batch) count += static_cast<S>(x.cols());
    mean.setZero();
    for (const auto& x : batch) mean += x.rowwise().sum();
    mean /= count;
    var.setZero();
    for (const auto& x : batch) var += (x.colwise() - mean).array().square().rowwise().sum().matrix();
    var /= count;
    running_mean = (S(1) - momentum) * running_mean + momentum * mean;
    running_var = (S(1) - momentum) * running_var + momentum * var;
    if (cache) cache->count = count;
  } else {
    mean = running_mean;
    var = running_var;
  }
  const Vector<S> invstd = (var.array() + S(kBatchNormEps)).rsqrt();
  std::vector<Matrix<S>> out;
  out.reserve(batch.size());
  if (cache) {
    cache->mean = mean;
    cache->invstd = invstd;
    cache->xhat.clear();
  }
  for (const auto& x : batch) {
    Matrix<S> xhat = ((x.colwise() - mean).array().colwise() * invstd.array()).matrix();
    out.push_back(((xhat.array().colwise() * gamma.array()).colwise() + beta.array()).matrix());
    if (cache) cache->xhat.push_back(std::move(xhat));
  }
  return out;
}

// Training-mode backward through the batch statistics.
template <typename S>
std::vector<Matrix<S>> batchnorm_backward(const BatchNormCache<S>& cache, const Vector<S>& gamma,
                                          const std::vector<Matrix<S>>& dY, Vector<S>& dgamma,
                                          Vector<S>& dbeta) {
  const auto channels = gamma.size();
  Vector<S> sum_dxhat = Vector<S>::Zero(channels);
  Vector<S> sum_dxhat_xhat = Vector<S>::Zero(channels);
  for (size_t i = 0; i < dY.size(); ++i) {
    const Matrix<S> dxhat = (dY[i].array().colwise() * gamma.array()).matrix();
    sum_dxhat += dxhat.rowwise().sum();
    sum_dxhat_xhat += (dxhat.array() * cache.xhat[i].array()).rowwise().sum().matrix();
    dgamma += (dY[i].array() * cache.xhat[i].array()).rowwise().sum().matrix();
    dbeta += dY[i].rowwise().sum();
  }
  std::vector<Matrix<S>> dX;
  dX.reserve(dY.size());
  const S m = cache.count;
  for (size_t i = 0; i < dY.size(); ++i) {
    const Matrix<S> dxhat = (dY[i].array().colwise() * gamma.array()).matrix();
    Matrix<S> dx = dxhat * m;
    dx.colwise() -= sum_dxhat;
    dx -= (cache.xhat[i].array().colwise() * sum_dxhat_xhat.array()).matrix();
    dX.push_back(((dx / m).array().colwise() * cache.invstd.array()).matrix());
  }
  return dX;
}

// Inference-mode backward: running statistics are constants.
template <typename S>
std::vector<Matrix<S>> batchnorm_backward_eval(const Vector<S>& gamma,
                                               const Vector<S>& running_var,
                                               const BatchNormCache<S>& cache,
                                               const std::vector<Matrix<S>>& dY,
                                               Vector<S>& dgamma, Vector<S>& dbeta) {
  const Vector<S> invstd = (running_var.array() + S(kBatchNormEps)).rsqrt();
  std::vector<Matrix<S>> dX;
  dX.reserve(dY.size());
  for (size_t i = 0; i < dY.size(); ++i) {
    dgamma += (dY[i].array() * cache.xhat[i].array()).rowwise().sum().matrix();
    dbeta += dY[i].rowwise().sum();
    dX.push_back((dY[i].array().colwise() * (gamma.array() * invstd.array())).matrix());
  }
  return dX;
}

// ----------------------------------------------------------------- lstm ---
// Weights: W (4H x I), U (4H x H), b (4H); gate order i, f, g, o. The input
// is (I x T); the output is every hidden state (H x T).

template <typename S>
struct LstmCache {
  Matrix<S> x;                   // input sequence
  Matrix<S> i, f, g, o, c, tanh_c;  // per-step gate activations (H x T)
};

template <typename S>
Vector<S> sigmoid(const Vector<S>& v) {
  return ((-v.array()).exp() + S(1)).inverse().matrix();
}

template <typename S>
Matrix<S> lstm_forward(const Matrix<S>& W, const Matrix<S>& U, const Vector<S>& b,
                       const Matrix<S>& X, LstmCache<S>* cache = nullptr) {
  const auto hidden = U.cols();
  if (W.rows() != 4 * hidden || U.rows() != 4 * hidden || b.size() != 4 * hidden)
    throw ArgumentError("lstm_forward: weight shapes disagree");
  if (W.cols() != X.rows()) throw ArgumentError("lstm_forward: input dim mismatch");
  const auto T = X.cols();

  Matrix<S> H_all(hidden, T);
  Vector<S> h = Vector<S>::Zero(hidden), c = Vector<S>::Zero(hidden);
  if (cache) {
    cache->x = X;
    for (Matrix<S>* m : {&cache->i, &cache->f, &cache->g, &cache->o, &cache->c, &cache->tanh_c})
      m->resize(hidden, T);
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    const Vector<S> z = W * X.col(t) + U * h + b;
    const Vector<S> i = sigmoid<S>(z.segment(0, hidden));
    const Vector<S> f = sigmoid<S>(z.segment(hidden, hidden));
    const Vector<S> g = z.segment(2 * hidden, hidden).array().tanh();
    const Vector<S> o = sigmoid<S>(z.segment(3 * hidden, hidden));
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    const Vector<S> tc = c.array().tanh();
    h = o.cwiseProduct(tc);
    H_all.col(t) = h;
    if (cache) {
      cache->i.col(t) = i;
      cache->f.col(t) = f;
      cache->g.col(t) = g;
      cache->o.col(t) = o;
      cache->c.col(t) = c;
      cache->tanh_c.col(t) = tc;
    }
  }
  return H_all;
}

// BPTT given upstream gradients for every hidden state (H x T).
template <typename S>
Matrix<S> lstm_backward(const Matrix<S>& W, const Matrix<S>& U, const LstmCache<S>& cache,
                        const Matrix<S>& dH_all, Matrix<S>& dW, Matrix<S>& dU, Vector<S>& db) {
  const auto hidden = U.cols();
  const auto T = cache.x.cols();
  Matrix<S> dX = Matrix<S>::Zero(cache.x.rows(), T);
  Vector<S> dh_next = Vector<S>::Zero(hidden), dc_next = Vector<S>::Zero(hidden);

  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const Vector<S> dh = dH_all.col(t) + dh_next;
    const Vector<S> i = cache.i.col(t), f = cache.f.col(t), g = cache.g.col(t),
                    o = cache.o.col(t), tc = cache.tanh_c.col(t);
    const Vector<S> c_prev =
        t > 0 ? Vector<S>(cache.c.col(t - 1)) : Vector<S>(Vector<S>::Zero(hidden));

    const Vector<S> do_ = dh.cwiseProduct(tc);
    const Vector<S> dc = dh.cwiseProduct(o).cwiseProduct(
                             (S(1) - tc.array().square()).matrix()) + dc_next;
    const Vector<S> di = dc.cwiseProduct(g);
    const Vector<S> df = dc.cwiseProduct(c_prev);
    const Vector<S> dg = dc.cwiseProduct(i);

    Vector<S> dz(4 * hidden);
    dz.segment(0, hidden) = di.cwiseProduct(i).cwiseProduct((S(1) - i.array()).matrix());
    dz.segment(hidden, hidden) = df.cwiseProduct(f).cwiseProduct((S(1) - f.array()).matrix());
    dz.segment(2 * hidden, hidden) = dg.cwiseProduct((S(1) - g.array().square()).matrix());
    dz.segment(3 * hidden, hidden) = do_.cwiseProduct(o).cwiseProduct((S(1) - o.array()).matrix());

    dW += dz * cache.x.col(t).transpose();
    if (t > 0) {
      const Vector<S> h_prev = cache.o.col(t - 1).cwiseProduct(cache.tanh_c.col(t - 1));
      dU += dz * h_prev.transpose();
    }
    db += dz;
    dX.col(t) = W.transpose() * dz;
    dh_next = U.transpose() * dz;
    dc_next = dc.cwiseProduct(f);
  }
  return dX;
}

// ------------------------------------------------------------ attention ---
// Single-head scaled dot-product attention. Queries come from Xq (Dq x Tq),
// keys/values from Xkv (Dkv x Tk); self-attention passes the same matrix
// twice. Scores(t, s) = <q_t, k_s> / sqrt(d); rows softmax to 1.

template <typename S>
struct AttentionWeights {
  Matrix<S> Wq, Wk, Wv;
  Vector<S> bq, bk, bv;
};

template <typename S>
struct AttentionCache {
  Matrix<S> xq, xkv;
  Matrix<S> Q, K, V;
  Matrix<S> A;  // (Tq x Tk) row-stochastic
};

template <typename S>
Matrix<S> attention_forward(const AttentionWeights<S>& w, const Matrix<S>& Xq,
                            const Matrix<S>& Xkv, AttentionCache<S>* cache = nullptr) {
  if (Xq.cols() == 0 || Xkv.cols() == 0) throw ArgumentError("attention_forward: empty sequence");
  const Matrix<S> Q = dense_forward(w.Wq, w.bq, Xq);
  const Matrix<S> K = dense_forward(w.Wk, w.bk, Xkv);
  const Matrix<S> V = dense_forward(w.Wv, w.bv, Xkv);
  const S scale = S(1) / std::sqrt(static_cast<S>(Q.rows()));
  Matrix<S> scores = Q.transpose() * K * scale;          // (Tq x Tk)
  Matrix<S> A = softmax_cols(Matrix<S>(scores.transpose())).transpose();  // row softmax
  Matrix<S> out = V * A.transpose();                     // (Dv x Tq)
  if (cache) {
    cache->xq = Xq;
    cache->xkv = Xkv;
    cache->Q = Q;
    cache->K = K;
    cache->V = V;
    cache->A = A;
  }
  return out;
}

template <typename S>
struct AttentionGrads {
  Matrix<S> dWq, dWk, dWv;
  Vector<S> dbq, dbk, dbv;
  Matrix<S> dXq, dXkv;
};

template <typename S>
AttentionGrads<S> attention_backward(const AttentionWeights<S>& w, const AttentionCache<S>& cache,
                                     const Matrix<S>& dOut) {
  AttentionGrads<S> g;
  g.dWq = Matrix<S>::Zero(w.Wq.rows(), w.Wq.cols());
  g.dWk = Matrix<S>::Zero(w.Wk.rows(), w.Wk.cols());
  g.dWv = Matrix<S>::Zero(w.Wv.rows(), w.Wv.cols());
  g.dbq = Vector<S>::Zero(w.bq.size());
  g.dbk = Vector<S>::Zero(w.bk.size());
  g.dbv = Vector<S>::Zero(w.bv.size());

  const S scale = S(1) / std::sqrt(static_cast<S>(cache.Q.rows()));
  const Matrix<S> dV = dOut * cache.A;            // (Dv x Tk)
  Matrix<S> dA = dOut.transpose() * cache.V;      // (Tq x Tk)
  // Row-wise softmax Jacobian.
  Matrix<S> dS(dA.rows(), dA.cols());
  for (Eigen::Index t = 0; t < dA.rows(); ++t) {
    const S dot = dA.row(t).cwiseProduct(cache.A.row(t)).sum();
    dS.row(t) = (cache.A.row(t).array() * (dA.row(t).array() - dot)).matrix();
  }
  const Matrix<S> dQ = cache.K * dS.transpose() * scale;  // (Dk x Tq)
  const Matrix<S> dK = cache.Q * dS * scale;              // (Dk x Tk)

  g.dXq = dense_backward(w.Wq, cache.xq, dQ, g.dWq, g.dbq);
  g.dXkv = dense_backward(w.Wk, cache.xkv, dK, g.dWk, g.dbk);
  g.dXkv += dense_backward(w.Wv, cache.xkv, dV, g.dWv, g.dbv);
  return g;
}

// -------------------------------------------------------------- pooling ---

template <typename S>
Vector<S> mean_pool_cols(const Matrix<S>& X) {
  return X.rowwise().mean();
}

template <typename S>
Matrix<S> mean_pool_cols_backward(const Vector<S>& dy, Eigen::Index cols) {
  return (dy / static_cast<S>(cols)).replicate(1, cols);
}

}  // namespace convsense::nn
