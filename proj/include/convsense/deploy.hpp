#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "convsense/fusion.hpp"

// Model compression and packaging: 8-bit affine quantization with optional
// quantization-aware fine-tuning, per-layer magnitude pruning, a
// self-describing checkpoint container, and single-segment latency
// benchmarking on the host.
namespace convsense::deploy {

using MatrixI8 = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

// Per-tensor affine mapping between int8 codes and real values:
// value = scale * (code - zero_point).  `zero_point` is not restricted to
// the int8 range so that degenerate (constant) tensors still dequantize
// near-exactly under the scale floor.
struct QuantRecord {
  double scale = 1.0;
  std::int64_t zero_point = 0;
  int bit_width = 8;
};

struct QuantizedTensor {
  MatrixI8 values;
  QuantRecord record;
};

// Asymmetric per-tensor affine quantization, rounding half to even.  The
// elementwise dequantization error is at most scale/2 (+ float slop), with
// scale floored at 1e-8 for constant tensors.  Exact zeros stay exactly
// zero through the round trip.  Throws ArgumentError on non-finite input.
std::pair<MatrixI8, QuantRecord> quantize_tensor(const MatrixXd& t);

MatrixXd dequantize_tensor(const MatrixI8& values, const QuantRecord& record);

// quantize -> dequantize round trip (the training-time quantization effect).
MatrixXd fake_quantize(const MatrixXd& t);

struct QuantizedModel {
  std::map<std::string, QuantizedTensor> tensors;
  std::map<std::string, MatrixXd> masks;
};

// Quantizes every stored tensor (running statistics included) and carries
// the pruning masks over.
QuantizedModel quantize_model(const models::ModelWeights& weights);
models::ModelWeights dequantize_model(const QuantizedModel& quantized);

// Copy of `weights` with every tensor except the batchnorm running
// statistics pushed through the quantization round trip.
models::ModelWeights fake_quantize_weights(const models::ModelWeights& weights);

// Zeroes the smallest-magnitude floor(fraction * size) entries of every
// multi-column weight tensor (biases and batchnorm vectors keep all their
// entries) and records a persistent 0/1 mask per pruned tensor.  Pruning an
// already-pruned model at the same fraction changes nothing.  Throws
// ArgumentError unless fraction is in (0,1).
models::ModelWeights prune_magnitude(const models::ModelWeights& weights, double fraction = 0.5);

// Fine-tunes pre-trained weights under simulated quantization: each step
// runs forward/backward on fake-quantized tensors and applies the gradients
// straight through to the float weights.  Pruning masks persist.  With 0
// epochs this is the post-training-quantization baseline (weights returned
// unchanged).  Deterministic in config.seed.
models::TrainResult qat_finetune(const models::ModelSpec& spec, models::ModelWeights pretrained,
                                 const std::vector<models::TrainSample>& samples,
                                 const models::TrainConfig& config);
models::TrainResult qat_finetune(const models::FusionSpec& spec, models::ModelWeights pretrained,
                                 const std::vector<models::TrainSample>& samples,
                                 const models::TrainConfig& config);

// ---- checkpoint container ----

struct CheckpointMeta {
  std::optional<models::ModelSpec> model;
  std::optional<models::FusionSpec> fusion;
  std::string config_hash;  // empty = not recorded
};

// One serializable model: either float weights or a quantized model, plus
// the describing metadata.
struct Checkpoint {
  CheckpointMeta meta;
  bool quantized = false;
  models::ModelWeights weights;  // used when !quantized
  QuantizedModel model8;         // used when quantized
};

// Self-describing byte stream: magic, a JSON directory (tensor names,
// shapes, dtypes, quantization records), then raw little-endian data.
// Tensors are stored at 8 bytes/entry (float) or 1 byte/entry (quantized);
// a tensor at >= 50% sparsity is stored as a presence bitmap plus its
// surviving entries.  Serialization is byte-deterministic.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);

// Inverse of serialize_checkpoint; throws IoError on any corruption.
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::string& path);

// ---- latency benchmarking ----

struct BenchmarkResult {
  double mean_ms = 0.0;
  double p50_ms = 0.0;  // nearest-rank percentiles over the timed runs
  double p95_ms = 0.0;
  std::vector<double> runs_ms;  // exactly n entries, warm-up excluded
};

// Times n single-segment inference passes (plus one untimed warm-up) on the
// current thread.
BenchmarkResult benchmark_inference(const models::ModelSpec& spec,
                                    const models::ModelWeights& weights,
                                    const models::ModelInput& input, int n = 10);
BenchmarkResult benchmark_inference(const models::FusionSpec& spec,
                                    const models::ModelWeights& weights,
                                    const models::ModelInput& input, int n = 10);

}  // namespace convsense::deploy
