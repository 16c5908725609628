#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convsense/models.hpp"

// Late-fusion strategies combining the acoustic branch with an inertial
// branch: embedding concatenation under a joint linear head, bidirectional
// cross-modal attention over short feature sequences, and averaging of the
// class probabilities of two separately trained branches.
namespace convsense::models {

enum class FusionStrategy {
  concat,           // concatenated trunk embeddings -> joint linear head
  cross_attention,  // each modality attends over the other's sequence
  softmax_avg,      // mean of separately trained branch probabilities
};

std::string to_string(FusionStrategy strategy);
FusionStrategy fusion_strategy_from_string(const std::string& text);

// A fused model.  The audio branch is always the recurrent spectrogram
// architecture; the inertial branch is one of the two IMU architectures
// (cross_attention requires the token architecture, whose per-channel conv
// stack supplies the frame features).
struct FusionSpec {
  FusionStrategy strategy = FusionStrategy::concat;
  ModelSpec audio_branch = ModelSpec::reference(ModelKind::pure_acoustic);
  ModelSpec imu_branch = ModelSpec::reference(ModelKind::cnn_attention);
  int xattn_dim = 32;    // shared projection width of the cross-modal attention
  int audio_steps = 10;  // recurrent outputs are mean-pooled down to this many steps
  int imu_frames = 30;   // frame count of the inertial conv-feature sequence

  static FusionSpec reference(FusionStrategy strategy);
  static FusionSpec compact(FusionStrategy strategy);

  std::string to_json() const;
  static FusionSpec from_json(const std::string& text);

  void validate() const;  // throws ValidationError on bad branch/dim choices
};

// Fused weights in one flat map: audio-branch tensors under "audio.",
// inertial-branch tensors under "motion.", cross-modal projections under
// "xattn.audio."/"xattn.motion.", and the joint classification head under
// "head.".  The trainable strategies drop the branches' own heads (and, for
// cross_attention, the embedding stages the joint graph never touches);
// softmax_avg keeps both branches complete and adds no joint tensors.
ModelWeights init_fusion_weights(const FusionSpec& spec, std::uint64_t seed);

std::size_t param_count(const FusionSpec& spec);

// Combines two separately trained single-modality models into softmax-average
// fusion weights (tensors and masks prefixed "audio."/"motion.").
ModelWeights merge_softmax_avg(const ModelWeights& audio, const ModelWeights& imu);

// ---- single-sample fusion operations ----

// Joint linear head over the concatenated embeddings.  Throws ArgumentError
// when the head was sized for a different concatenation.
VectorXd fuse_concat(const VectorXd& audio_emb, const VectorXd& imu_emb, const MatrixXd& head_W,
                     const VectorXd& head_b);

// Row-stochastic attention matrices of one cross-attention evaluation.
struct CrossAttentionTrace {
  MatrixXd audio_to_imu;  // (audio steps x imu frames)
  MatrixXd imu_to_audio;  // (imu frames x audio steps)
};

// Bidirectional cross-modal attention over two feature sequences (one column
// per step): audio queries attend over the inertial sequence and vice versa;
// each direction's outputs are mean-pooled, concatenated, and classified by
// the joint head.  `weights` must hold the "xattn.*" projections and
// "head.*".  Throws ArgumentError on an empty sequence.
VectorXd fuse_cross_attention(const MatrixXd& audio_seq, const MatrixXd& imu_seq,
                              const ModelWeights& weights,
                              CrossAttentionTrace* trace = nullptr);

// Mean of two class-probability vectors.  Each input must be a probability
// simplex vector (entries non-negative, sum 1 within 1e-6).
VectorXd fuse_softmax_avg(const VectorXd& audio_probs, const VectorXd& imu_probs);

// ---- batched training and inference ----

struct FusionBatchCache {
  BatchCache audio, motion;
  std::vector<nn::AttentionCache<double>> a2i, i2a;  // cross_attention only
  MatrixXd fused;                                    // input of the joint head
};

// Joint logits (3 x B) for the trainable strategies.  Throws ValidationError
// for softmax_avg, which has no joint head.
MatrixXd fusion_logits(const FusionSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training,
                       FusionBatchCache* cache = nullptr);

// Gradients of the batch loss w.r.t. every fused tensor.
GradMap fusion_backward(const FusionSpec& spec, const ModelWeights& weights,
                        const FusionBatchCache& cache, const MatrixXd& d_logits);

// Class probabilities (3 x B) in inference mode, defined for every strategy.
MatrixXd fusion_probs(const FusionSpec& spec, const ModelWeights& weights,
                      const std::vector<ModelInput>& inputs);

std::vector<int> fusion_predict(const FusionSpec& spec, const ModelWeights& weights,
                                const std::vector<ModelInput>& inputs);

// Joint training of both branches under the single fusion head, on the same
// driver as train_model.  softmax_avg throws ValidationError: its branches
// are trained separately and combined with merge_softmax_avg.
TrainResult train_fusion(const FusionSpec& spec, const std::vector<TrainSample>& samples,
                         const TrainConfig& config);

}  // namespace convsense::models
