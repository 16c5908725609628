#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "convsense/dsp.hpp"
#include "convsense/nn.hpp"
#include "convsense/types.hpp"

// Classifier architectures over preprocessed segments, with a hand-rolled
// seeded training loop (plain gradient descent, double precision).  Weights
// live in a flat name -> matrix map so that quantization, pruning, and
// serialization can treat every architecture uniformly.
namespace convsense::models {

enum class ModelKind {
  pure_acoustic,   // spectrogram -> conv1d x2 + band skip -> LSTM -> dense head
  scnnb,           // IMU energy image -> shallow 2-D conv/batchnorm/pool stack
  cnn_attention,   // per-channel 1-D convs -> channel tokens -> self-attention
};

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& text);

// Dimensions of one architecture.  Fields not used by a given kind are
// ignored by it but still serialized, so round-trips are lossless.
struct ModelSpec {
  ModelKind kind = ModelKind::pure_acoustic;
  int conv1_out = 96;    // first conv width (acoustic) / channels (others)
  int conv2_out = 64;    // second conv width
  int conv_kernel = 5;   // acoustic 1-D kernel length
  int skip_proj = 32;    // per-step linear projection of the raw bands
  int lstm_hidden = 256;
  int fc1_dim = 512;
  int attn_dim = 16;     // query/key/value width of the token attention
  int embed_dim = 256;   // final embedding fed to the classification head
  int imu_len = 150;     // IMU strip length the scnnb dense layer is sized for

  // Full-size preset for each architecture.
  static ModelSpec reference(ModelKind kind);
  // Down-scaled preset that trains quickly on a single core while keeping
  // the exact topology of the reference networks.
  static ModelSpec compact(ModelKind kind);

  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);

  void validate() const;  // throws ValidationError on nonsensical dims
};

// One segment as the networks consume it.
struct ModelInput {
  MatrixXd spectrogram;  // 128 x T (T = window_len_s / 0.25)
  MatrixXd imu_image;    // 6 x (energy steps per frame * n_frames)
};

ModelInput make_model_input(const dsp::SegmentFeatures& features);

struct TrainSample {
  ModelInput input;
  int label = 0;
  std::string group_id;
};

TrainSample make_train_sample(const dsp::SegmentFeatures& features);

// All state of a model: trainable tensors, batchnorm running statistics
// (names ending in ".running_mean"/".running_var"), and optional binary
// pruning masks that persist across further training steps.
struct ModelWeights {
  std::map<std::string, MatrixXd> tensors;
  std::map<std::string, MatrixXd> masks;  // 0/1, same shape as the tensor

  // Re-applies every mask to its tensor (weights stay pruned).
  void apply_masks();
};

using GradMap = std::map<std::string, MatrixXd>;

// --- weight-map helpers shared by the architectures and the fusion code ---

// Tensor lookup that names the missing entry instead of failing silently.
const MatrixXd& tensor(const ModelWeights& weights, const std::string& name);
// Same lookup for single-column tensors (biases).
VectorXd bias(const ModelWeights& weights, const std::string& name);
// Zero-initialized gradient slot for `name`, created on first touch.
MatrixXd& grad_slot(GradMap& grads, const std::string& name, Eigen::Index rows,
                    Eigen::Index cols);
// dense_backward with the gradients accumulated into "<name>.W"/"<name>.b".
MatrixXd dense_backward_named(const ModelWeights& weights, const std::string& name,
                              const MatrixXd& X, const MatrixXd& dY, GradMap& grads);
// Fan-in-scaled uniform initializer, seeded by (seed, tensor name).
MatrixXd uniform_tensor(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in,
                        std::uint64_t seed, const std::string& name);

// Seeded fan-in-scaled uniform initialization; biases start at zero except
// the LSTM forget gate (1.0), batchnorm starts at identity.
ModelWeights init_weights(const ModelSpec& spec, std::uint64_t seed);

// Number of trainable parameters (running statistics excluded).
std::size_t param_count(const ModelWeights& weights);
std::size_t param_count(const ModelSpec& spec);

// Per-sample activation records for the backward pass.
struct AcousticSampleCache {
  MatrixXd x;                    // input spectrogram
  nn::ConvCache<double> c1, c2;  // conv patch caches
  MatrixXd z1, z2;               // pre-ReLU activations after batchnorm
  nn::LstmCache<double> lstm;
};

struct ScnnbSampleCache {
  nn::ConvCache<double> c1, c2;
  MatrixXd z1, z2;  // pre-ReLU activations after batchnorm
  nn::PoolCache<double> p1, p2;
};

struct AttentionSampleCache {
  std::vector<nn::ConvCache<double>> c1, c2;  // one per IMU channel (shared kernels)
  std::vector<MatrixXd> y1, y2;               // pre-ReLU conv outputs per channel
  nn::AttentionCache<double> attn;
  Eigen::Index cols = 0;  // time length the channel tokens were pooled over
};

// Everything trunk_forward records for one batch.
struct BatchCache {
  std::vector<AcousticSampleCache> acoustic;
  std::vector<ScnnbSampleCache> scnnb;
  std::vector<AttentionSampleCache> attention;
  nn::BatchNormCache<double> bn1, bn2;
  MatrixXd trunk_in1;    // batched input of the first dense stage
  MatrixXd pre1, pre2;   // pre-ReLU dense activations
  MatrixXd embeddings;   // post-ReLU embeddings (head backward needs them)
};

// Embeddings for a batch, one column per sample (embed_dim x B).  Training
// mode uses batch statistics in batchnorm layers and updates the running
// statistics stored in `weights`; inference mode reads them only.
MatrixXd trunk_forward(const ModelSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training,
                       BatchCache* cache, const std::string& prefix = "");

// Gradient of the batch loss w.r.t. every trunk tensor, given the gradient
// w.r.t. the embeddings produced by the matching trunk_forward call.
GradMap trunk_backward(const ModelSpec& spec, const ModelWeights& weights,
                       const BatchCache& cache, const MatrixXd& d_embeddings,
                       const std::string& prefix = "");

// --- sequence taps consumed by the cross-attention fusion ---

// Recurrent-output sequence of the acoustic trunk: one (lstm_hidden x T)
// matrix per sample.  Fills the same cache slots as the full trunk pass.
std::vector<MatrixXd> acoustic_sequence_forward(const ModelSpec& spec, ModelWeights& weights,
                                                const std::vector<ModelInput>& inputs,
                                                bool training, BatchCache* cache,
                                                const std::string& prefix = "");

// Gradients w.r.t. the conv/skip/LSTM tensors given per-step gradients for
// every hidden state of every sample in the cached batch.
GradMap acoustic_sequence_backward(const ModelSpec& spec, const ModelWeights& weights,
                                   const BatchCache& cache, const std::vector<MatrixXd>& d_seq,
                                   const std::string& prefix = "");

// Per-frame features of the token trunk's shared conv stack: post-ReLU conv
// activations mean-pooled over each frame's columns and over the six IMU
// channels.  One (conv2_out x n_frames) matrix per sample; every image's
// column count must divide evenly into n_frames.
std::vector<MatrixXd> motion_frame_forward(ModelWeights& weights,
                                           const std::vector<ModelInput>& inputs, int n_frames,
                                           BatchCache* cache, const std::string& prefix = "");

GradMap motion_frame_backward(const ModelWeights& weights, const BatchCache& cache,
                              const std::vector<MatrixXd>& d_frames, int n_frames,
                              const std::string& prefix = "");

// Class logits (3 x B): trunk embedding plus the linear head.
MatrixXd forward_batch(const ModelSpec& spec, ModelWeights& weights,
                       const std::vector<ModelInput>& inputs, bool training,
                       BatchCache* cache = nullptr);

// Gradients of mean cross-entropy w.r.t. all tensors (head included).
GradMap backward_batch(const ModelSpec& spec, const ModelWeights& weights,
                       const BatchCache& cache, const MatrixXd& d_logits);

// Argmax class per input, inference mode.  The weights are copied once so
// the caller's state is untouched.
std::vector<int> predict(const ModelSpec& spec, const ModelWeights& weights,
                         const std::vector<ModelInput>& inputs);

// Inference-mode logits without mutating the caller's weights.
MatrixXd infer_logits(const ModelSpec& spec, const ModelWeights& weights,
                      const std::vector<ModelInput>& inputs);

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 40;
  int batch_size = 16;
  std::uint64_t seed = 0;
  // Epochs without holdout improvement before stopping; 0 disables the
  // group holdout entirely and trains on every sample for `epochs`.
  int early_stop_patience = 5;

  void validate() const;
};

struct TrainResult {
  ModelWeights weights;              // best holdout weights (or final ones)
  std::vector<double> train_loss;    // mean cross-entropy per epoch
  std::vector<double> holdout_loss;  // empty when no holdout was used
  int best_epoch = -1;               // -1 when no holdout was used
  std::vector<std::string> holdout_groups;
};

// Batch callback of the training driver.  A training step runs forward,
// backward, and the parameter update on one batch and returns its mean loss;
// an evaluation callback scores a batch without updating anything.
using BatchFn = std::function<double(ModelWeights&, const std::vector<ModelInput>&,
                                     const std::vector<int>&)>;

// The mini-batch driver shared by every trainable configuration: label
// validation, the seeded group holdout (max(1, floor(0.1 * n_groups)) whole
// groups, skipped when patience is 0 or only one group exists), seeded batch
// shuffling, per-epoch loss bookkeeping, and best-weights early stopping.
// `initial` provides the starting tensors along with any pruning masks.
TrainResult train_loop(const std::vector<TrainSample>& samples, const TrainConfig& config,
                       ModelWeights initial, const BatchFn& train_step, const BatchFn& eval_batch);

// Plain mini-batch gradient descent from a fresh seeded initialization.
// Deterministic in (spec, samples, config).  Throws ValidationError if any
// class is absent from the samples.
TrainResult train_model(const ModelSpec& spec, const std::vector<TrainSample>& samples,
                        const TrainConfig& config);

}  // namespace convsense::models
