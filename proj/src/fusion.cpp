#include "convsense/fusion.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <utility>

#include "convsense/seed.hpp"

namespace convsense::models {

namespace {

using json = nlohmann::json;

constexpr const char* kAudioPrefix = "audio.";
constexpr const char* kMotionPrefix = "motion.";

bool has_prefix(const std::string& name, const std::string& prefix) {
  return name.rfind(prefix, 0) == 0;
}

// Copies `src` into `dst` under `prefix`, optionally without its head.
void copy_prefixed(const ModelWeights& src, const std::string& prefix, bool keep_head,
                   ModelWeights& dst) {
  for (const auto& [name, t] : src.tensors)
    if (keep_head || !has_prefix(name, "head.")) dst.tensors[prefix + name] = t;
  for (const auto& [name, m] : src.masks)
    if (keep_head || !has_prefix(name, "head.")) dst.masks[prefix + name] = m;
}

// The sub-model stored under `prefix`, with the prefix removed.
ModelWeights strip_prefix(const ModelWeights& w, const std::string& prefix) {
  ModelWeights out;
  for (const auto& [name, t] : w.tensors)
    if (has_prefix(name, prefix)) out.tensors[name.substr(prefix.size())] = t;
  for (const auto& [name, m] : w.masks)
    if (has_prefix(name, prefix)) out.masks[name.substr(prefix.size())] = m;
  if (out.tensors.empty()) throw ArgumentError("no tensors stored under prefix " + prefix);
  return out;
}

// Attention weights with queries projected from one modality and keys/values
// from the other.
nn::AttentionWeights<double> xattn_weights(const ModelWeights& w, const std::string& q_side,
                                           const std::string& kv_side) {
  nn::AttentionWeights<double> a;
  a.Wq = tensor(w, "xattn." + q_side + ".Wq");
  a.bq = bias(w, "xattn." + q_side + ".bq");
  a.Wk = tensor(w, "xattn." + kv_side + ".Wk");
  a.bk = bias(w, "xattn." + kv_side + ".bk");
  a.Wv = tensor(w, "xattn." + kv_side + ".Wv");
  a.bv = bias(w, "xattn." + kv_side + ".bv");
  return a;
}

// Mean over `steps` contiguous column chunks (chunk i spans [i*T/S, (i+1)*T/S)).
MatrixXd chunk_mean(const MatrixXd& X, Eigen::Index steps) {
  const Eigen::Index T = X.cols();
  MatrixXd out(X.rows(), steps);
  for (Eigen::Index i = 0; i < steps; ++i) {
    const Eigen::Index lo = i * T / steps, hi = (i + 1) * T / steps;
    out.col(i) = X.middleCols(lo, hi - lo).rowwise().mean();
  }
  return out;
}

MatrixXd chunk_mean_backward(const MatrixXd& dY, Eigen::Index T) {
  const Eigen::Index steps = dY.cols();
  MatrixXd dX(dY.rows(), T);
  for (Eigen::Index i = 0; i < steps; ++i) {
    const Eigen::Index lo = i * T / steps, hi = (i + 1) * T / steps;
    dX.middleCols(lo, hi - lo) =
        (dY.col(i) / static_cast<double>(hi - lo)).replicate(1, hi - lo);
  }
  return dX;
}

// Both attention directions for one sample, mean-pooled and stacked.
VectorXd xattn_fused_forward(const ModelWeights& w, const MatrixXd& audio_seq,
                             const MatrixXd& imu_seq, nn::AttentionCache<double>* a2i,
                             nn::AttentionCache<double>* i2a) {
  const auto wa = xattn_weights(w, "audio", "motion");
  const auto wi = xattn_weights(w, "motion", "audio");
  const MatrixXd out_a = nn::attention_forward(wa, audio_seq, imu_seq, a2i);
  const MatrixXd out_i = nn::attention_forward(wi, imu_seq, audio_seq, i2a);
  VectorXd fused(out_a.rows() + out_i.rows());
  fused << nn::mean_pool_cols(out_a), nn::mean_pool_cols(out_i);
  return fused;
}

// Adds one direction's attention gradients into the named slots.
void add_xattn_grads(GradMap& g, const std::string& q_side, const std::string& kv_side,
                     const nn::AttentionGrads<double>& ag) {
  auto add = [&g](const std::string& name, const MatrixXd& v) {
    grad_slot(g, name, v.rows(), v.cols()) += v;
  };
  add("xattn." + q_side + ".Wq", ag.dWq);
  add("xattn." + q_side + ".bq", ag.dbq);
  add("xattn." + kv_side + ".Wk", ag.dWk);
  add("xattn." + kv_side + ".bk", ag.dbk);
  add("xattn." + kv_side + ".Wv", ag.dWv);
  add("xattn." + kv_side + ".bv", ag.dbv);
}

void accumulate(GradMap& dst, const GradMap& src) {
  for (const auto& [name, grad] : src) {
    auto [it, fresh] = dst.try_emplace(name, grad);
    if (!fresh) it->second += grad;
  }
}

}  // namespace

std::string to_string(FusionStrategy strategy) {
  switch (strategy) {
    case FusionStrategy::concat: return "concat";
    case FusionStrategy::cross_attention: return "cross_attention";
    case FusionStrategy::softmax_avg: return "softmax_avg";
  }
  throw ArgumentError("unknown fusion strategy");
}

FusionStrategy fusion_strategy_from_string(const std::string& text) {
  if (text == "concat") return FusionStrategy::concat;
  if (text == "cross_attention") return FusionStrategy::cross_attention;
  if (text == "softmax_avg") return FusionStrategy::softmax_avg;
  throw ArgumentError("unknown fusion strategy: " + text);
}

FusionSpec FusionSpec::reference(FusionStrategy strategy) {
  FusionSpec f;
  f.strategy = strategy;
  return f;  // member defaults are the reference branches
}

FusionSpec FusionSpec::compact(FusionStrategy strategy) {
  FusionSpec f;
  f.strategy = strategy;
  f.audio_branch = ModelSpec::compact(ModelKind::pure_acoustic);
  f.imu_branch = ModelSpec::compact(ModelKind::cnn_attention);
  f.xattn_dim = 16;
  return f;
}

std::string FusionSpec::to_json() const {
  json j{{"strategy", models::to_string(strategy)},
         {"audio_branch", json::parse(audio_branch.to_json())},
         {"imu_branch", json::parse(imu_branch.to_json())},
         {"xattn_dim", xattn_dim},
         {"audio_steps", audio_steps},
         {"imu_frames", imu_frames}};
  return j.dump();
}

FusionSpec FusionSpec::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad fusion spec JSON: ") + e.what());
  }
  if (!j.contains("strategy")) throw IoError("fusion spec JSON lacks \"strategy\"");
  FusionSpec f;
  f.strategy = fusion_strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("audio_branch")) f.audio_branch = ModelSpec::from_json(j.at("audio_branch").dump());
  if (j.contains("imu_branch")) f.imu_branch = ModelSpec::from_json(j.at("imu_branch").dump());
  f.xattn_dim = j.value("xattn_dim", f.xattn_dim);
  f.audio_steps = j.value("audio_steps", f.audio_steps);
  f.imu_frames = j.value("imu_frames", f.imu_frames);
  f.validate();
  return f;
}

void FusionSpec::validate() const {
  audio_branch.validate();
  imu_branch.validate();
  if (audio_branch.kind != ModelKind::pure_acoustic)
    throw ValidationError("fusion audio branch must be the pure_acoustic architecture");
  if (imu_branch.kind == ModelKind::pure_acoustic)
    throw ValidationError("fusion IMU branch must be an inertial architecture");
  if (strategy == FusionStrategy::cross_attention) {
    if (imu_branch.kind != ModelKind::cnn_attention)
      throw ValidationError(
          "cross_attention fusion taps the per-channel conv stack and needs a "
          "cnn_attention IMU branch");
    if (xattn_dim < 1) throw ValidationError("xattn_dim must be positive");
    if (audio_steps < 1) throw ValidationError("audio_steps must be positive");
    if (imu_frames < 1) throw ValidationError("imu_frames must be positive");
  }
}

ModelWeights init_fusion_weights(const FusionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const ModelWeights audio = init_weights(spec.audio_branch, seed_stream(seed, "audio-branch"));
  const ModelWeights imu = init_weights(spec.imu_branch, seed_stream(seed, "motion-branch"));
  if (spec.strategy == FusionStrategy::softmax_avg) return merge_softmax_avg(audio, imu);

  ModelWeights w;
  copy_prefixed(audio, kAudioPrefix, false, w);
  copy_prefixed(imu, kMotionPrefix, false, w);

  Eigen::Index head_in = 0;
  if (spec.strategy == FusionStrategy::concat) {
    head_in = spec.audio_branch.embed_dim + spec.imu_branch.embed_dim;
  } else {
    // The joint graph consumes the recurrent sequence and the conv frames
    // directly, so the branches' own embedding stages stay out of it.
    for (const char* name : {"fc1.W", "fc1.b", "fc2.W", "fc2.b"})
      w.tensors.erase(std::string(kAudioPrefix) + name);
    for (const char* name :
         {"fc1.W", "fc1.b", "attn.Wq", "attn.Wk", "attn.Wv", "attn.bq", "attn.bk", "attn.bv"})
      w.tensors.erase(std::string(kMotionPrefix) + name);

    const std::pair<const char*, int> sides[] = {{"audio", spec.audio_branch.lstm_hidden},
                                                 {"motion", spec.imu_branch.conv2_out}};
    for (const auto& [side, fan_in] : sides) {
      for (const char* proj : {"Wq", "Wk", "Wv"}) {
        const std::string name = std::string("xattn.") + side + "." + proj;
        w.tensors[name] = uniform_tensor(spec.xattn_dim, fan_in, fan_in, seed, name);
      }
      for (const char* b : {"bq", "bk", "bv"})
        w.tensors[std::string("xattn.") + side + "." + b] = MatrixXd::Zero(spec.xattn_dim, 1);
    }
    head_in = 2 * spec.xattn_dim;
  }
  w.tensors["head.W"] = uniform_tensor(kNumClasses, head_in, head_in, seed, "head.W");
  w.tensors["head.b"] = MatrixXd::Zero(kNumClasses, 1);
  return w;
}

std::size_t param_count(const FusionSpec& spec) {
  return param_count(init_fusion_weights(spec, 0));
}

ModelWeights merge_softmax_avg(const ModelWeights& audio, const ModelWeights& imu) {
  ModelWeights w;
  copy_prefixed(audio, kAudioPrefix, true, w);
  copy_prefixed(imu, kMotionPrefix, true, w);
  return w;
}

VectorXd fuse_concat(const VectorXd& audio_emb, const VectorXd& imu_emb, const MatrixXd& head_W,
                     const VectorXd& head_b) {
  const Eigen::Index n = audio_emb.size() + imu_emb.size();
  if (head_W.cols() != n)
    throw ArgumentError("fusion head expects " + std::to_string(head_W.cols()) +
                        " inputs, the embeddings concatenate to " + std::to_string(n));
  if (head_b.size() != head_W.rows())
    throw ArgumentError("fusion head bias length does not match its weight rows");
  VectorXd fused(n);
  fused << audio_emb, imu_emb;
  return head_W * fused + head_b;
}

VectorXd fuse_cross_attention(const MatrixXd& audio_seq, const MatrixXd& imu_seq,
                              const ModelWeights& weights, CrossAttentionTrace* trace) {
  nn::AttentionCache<double> a2i, i2a;
  const VectorXd fused = xattn_fused_forward(weights, audio_seq, imu_seq, &a2i, &i2a);
  if (trace) {
    trace->audio_to_imu = a2i.A;
    trace->imu_to_audio = i2a.A;
  }
  const MatrixXd& W = tensor(weights, "head.W");
  if (W.cols() != fused.size())
    throw ArgumentError("fusion head expects " + std::to_string(W.cols()) +
                        " inputs, the attended vectors concatenate to " +
                        std::to_string(fused.size()));
  return W * fused + bias(weights, "head.b");
}

VectorXd fuse_softmax_avg(const VectorXd& audio_probs, const VectorXd& imu_probs) {
  auto check = [](const VectorXd& p, const char* side) {
    if (p.size() != kNumClasses)
      throw ArgumentError(std::string(side) + " probability vector must have " +
                          std::to_string(kNumClasses) + " entries");
    if (p.minCoeff() < -1e-9)
      throw ArgumentError(std::string(side) + " probabilities contain a negative entry");
    if (std::abs(p.sum() - 1.0) > 1e-6)
      throw ArgumentError(std::string(side) + " probabilities do not sum to 1");
  };
  check(audio_probs, "audio");
  check(imu_probs, "imu");
  return 0.5 * (audio_probs + imu_probs);
}

MatrixXd fusion_logits(const FusionSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training,
                       FusionBatchCache* cache) {
  spec.validate();
  if (spec.strategy == FusionStrategy::softmax_avg)
    throw ValidationError("softmax_avg fusion has no joint head; use fusion_probs");
  if (inputs.empty()) throw ArgumentError("empty batch");
  const auto B = static_cast<Eigen::Index>(inputs.size());

  FusionBatchCache local;
  FusionBatchCache& c = cache ? *cache : local;

  MatrixXd fused;
  if (spec.strategy == FusionStrategy::concat) {
    MatrixXd ea = trunk_forward(spec.audio_branch, weights, inputs, training, &c.audio,
                                kAudioPrefix);
    MatrixXd ei = trunk_forward(spec.imu_branch, weights, inputs, training, &c.motion,
                                kMotionPrefix);
    fused.resize(ea.rows() + ei.rows(), B);
    fused << ea, ei;
  } else {
    auto seqs = acoustic_sequence_forward(spec.audio_branch, weights, inputs, training, &c.audio,
                                          kAudioPrefix);
    auto frames = motion_frame_forward(weights, inputs, spec.imu_frames, &c.motion,
                                       kMotionPrefix);
    c.a2i.resize(inputs.size());
    c.i2a.resize(inputs.size());
    fused.resize(2 * spec.xattn_dim, B);
    for (Eigen::Index s = 0; s < B; ++s) {
      const MatrixXd& seq = seqs[static_cast<size_t>(s)];
      const MatrixXd pooled =
          chunk_mean(seq, std::min<Eigen::Index>(spec.audio_steps, seq.cols()));
      fused.col(s) = xattn_fused_forward(weights, pooled, frames[static_cast<size_t>(s)],
                                         &c.a2i[static_cast<size_t>(s)],
                                         &c.i2a[static_cast<size_t>(s)]);
    }
  }
  c.fused = fused;
  return nn::dense_forward(tensor(weights, "head.W"), bias(weights, "head.b"), fused);
}

GradMap fusion_backward(const FusionSpec& spec, const ModelWeights& weights,
                        const FusionBatchCache& cache, const MatrixXd& d_logits) {
  GradMap g;
  MatrixXd dFused = dense_backward_named(weights, "head", cache.fused, d_logits, g);

  if (spec.strategy == FusionStrategy::concat) {
    const Eigen::Index na = cache.audio.embeddings.rows();
    accumulate(g, trunk_backward(spec.audio_branch, weights, cache.audio, dFused.topRows(na),
                                 kAudioPrefix));
    accumulate(g, trunk_backward(spec.imu_branch, weights, cache.motion,
                                 dFused.bottomRows(dFused.rows() - na), kMotionPrefix));
    return g;
  }

  const auto wa = xattn_weights(weights, "audio", "motion");
  const auto wi = xattn_weights(weights, "motion", "audio");
  const auto B = static_cast<Eigen::Index>(cache.a2i.size());
  const Eigen::Index xd = wa.Wq.rows();
  std::vector<MatrixXd> d_seq(static_cast<size_t>(B)), d_frames(static_cast<size_t>(B));
  for (Eigen::Index s = 0; s < B; ++s) {
    const auto& ca = cache.a2i[static_cast<size_t>(s)];
    const auto& ci = cache.i2a[static_cast<size_t>(s)];
    const VectorXd dva = dFused.col(s).head(xd);
    const VectorXd dvi = dFused.col(s).tail(xd);
    const MatrixXd dOutA = nn::mean_pool_cols_backward(dva, ca.xq.cols());
    const MatrixXd dOutI = nn::mean_pool_cols_backward(dvi, ci.xq.cols());
    const auto ga = nn::attention_backward(wa, ca, dOutA);
    const auto gi = nn::attention_backward(wi, ci, dOutI);
    add_xattn_grads(g, "audio", "motion", ga);
    add_xattn_grads(g, "motion", "audio", gi);
    const MatrixXd dPooled = ga.dXq + gi.dXkv;
    const Eigen::Index T = cache.audio.acoustic[static_cast<size_t>(s)].lstm.x.cols();
    d_seq[static_cast<size_t>(s)] = chunk_mean_backward(dPooled, T);
    d_frames[static_cast<size_t>(s)] = ga.dXkv + gi.dXq;
  }
  accumulate(g, acoustic_sequence_backward(spec.audio_branch, weights, cache.audio, d_seq,
                                           kAudioPrefix));
  accumulate(g, motion_frame_backward(weights, cache.motion, d_frames, spec.imu_frames,
                                      kMotionPrefix));
  return g;
}

MatrixXd fusion_probs(const FusionSpec& spec, const ModelWeights& weights,
                      const std::vector<ModelInput>& inputs) {
  spec.validate();
  if (spec.strategy == FusionStrategy::softmax_avg) {
    const MatrixXd pa =
        nn::softmax_cols(infer_logits(spec.audio_branch, strip_prefix(weights, kAudioPrefix), inputs));
    const MatrixXd pi =
        nn::softmax_cols(infer_logits(spec.imu_branch, strip_prefix(weights, kMotionPrefix), inputs));
    return 0.5 * (pa + pi);
  }
  ModelWeights local = weights;  // inference leaves the caller's state alone
  return nn::softmax_cols(fusion_logits(spec, local, inputs, false, nullptr));
}

std::vector<int> fusion_predict(const FusionSpec& spec, const ModelWeights& weights,
                                const std::vector<ModelInput>& inputs) {
  const MatrixXd probs = fusion_probs(spec, weights, inputs);
  std::vector<int> out(static_cast<size_t>(probs.cols()));
  for (Eigen::Index c = 0; c < probs.cols(); ++c) {
    Eigen::Index best = 0;
    probs.col(c).maxCoeff(&best);
    out[static_cast<size_t>(c)] = static_cast<int>(best);
  }
  return out;
}

TrainResult train_fusion(const FusionSpec& spec, const std::vector<TrainSample>& samples,
                         const TrainConfig& config) {
  spec.validate();
  config.validate();
  if (spec.strategy == FusionStrategy::softmax_avg)
    throw ValidationError(
        "softmax_avg fusion has no jointly trained parameters; train each branch "
        "separately and combine them with merge_softmax_avg");
  const double lr = config.learning_rate;
  auto step = [&spec, lr](ModelWeights& w, const std::vector<ModelInput>& inputs,
                          const std::vector<int>& labels) {
    FusionBatchCache cache;
    MatrixXd logits = fusion_logits(spec, w, inputs, true, &cache);
    const double loss = nn::cross_entropy(logits, labels);
    GradMap grads = fusion_backward(spec, w, cache, nn::cross_entropy_backward(logits, labels));
    for (const auto& [name, grad] : grads) w.tensors.at(name) -= lr * grad;
    w.apply_masks();
    return loss;
  };
  auto eval = [&spec](ModelWeights& w, const std::vector<ModelInput>& inputs,
                      const std::vector<int>& labels) {
    return nn::cross_entropy(fusion_logits(spec, w, inputs, false, nullptr), labels);
  };
  return train_loop(samples, config, init_fusion_weights(spec, config.seed), step, eval);
}

}  // namespace convsense::models
