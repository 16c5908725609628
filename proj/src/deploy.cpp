#include "convsense/deploy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace convsense::deploy {

namespace {

using json = nlohmann::json;
using models::ModelWeights;

constexpr char kMagic[8] = {'C', 'S', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kQMin = -128;
constexpr int kQMax = 127;
constexpr double kScaleFloor = 1e-8;

std::int64_t round_even_i64(double v) {
  const double r = std::nearbyint(v);  // default FP mode rounds half to even
  if (!(std::abs(r) < 4.6e18))
    throw ArgumentError("tensor magnitude too large to quantize");
  return static_cast<std::int64_t>(r);
}

bool is_running_stat(const std::string& name) {
  return name.find("running") != std::string::npos;
}

}  // namespace

std::pair<MatrixI8, QuantRecord> quantize_tensor(const MatrixXd& t) {
  if (!t.allFinite()) throw ArgumentError("cannot quantize a tensor with NaN or Inf entries");
  QuantRecord rec;
  double lo = 0.0, hi = 0.0;
  if (t.size() > 0) {
    lo = t.minCoeff();
    hi = t.maxCoeff();
  }
  // One code of headroom (254 steps for 256 codes) keeps every rounded value
  // inside the int8 window, so the scale/2 error bound never meets a clamp.
  rec.scale = std::max((hi - lo) / 254.0, kScaleFloor);
  rec.zero_point = kQMin - round_even_i64(lo / rec.scale);

  MatrixI8 q(t.rows(), t.cols());
  for (Eigen::Index j = 0; j < t.cols(); ++j)
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const std::int64_t code = round_even_i64(t(i, j) / rec.scale) + rec.zero_point;
      q(i, j) = static_cast<std::int8_t>(std::clamp<std::int64_t>(code, kQMin, kQMax));
    }
  return {std::move(q), rec};
}

MatrixXd dequantize_tensor(const MatrixI8& values, const QuantRecord& record) {
  return record.scale *
         (values.cast<double>().array() - static_cast<double>(record.zero_point)).matrix();
}

MatrixXd fake_quantize(const MatrixXd& t) {
  auto [q, rec] = quantize_tensor(t);
  return dequantize_tensor(q, rec);
}

QuantizedModel quantize_model(const ModelWeights& weights) {
  QuantizedModel out;
  for (const auto& [name, t] : weights.tensors) {
    auto [q, rec] = quantize_tensor(t);
    out.tensors[name] = QuantizedTensor{std::move(q), rec};
  }
  out.masks = weights.masks;
  return out;
}

ModelWeights dequantize_model(const QuantizedModel& quantized) {
  ModelWeights out;
  for (const auto& [name, qt] : quantized.tensors)
    out.tensors[name] = dequantize_tensor(qt.values, qt.record);
  out.masks = quantized.masks;
  return out;
}

ModelWeights fake_quantize_weights(const ModelWeights& weights) {
  ModelWeights out = weights;
  for (auto& [name, t] : out.tensors)
    if (!is_running_stat(name)) t = fake_quantize(t);
  return out;
}

ModelWeights prune_magnitude(const ModelWeights& weights, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw ArgumentError("prune fraction must lie in (0,1)");
  ModelWeights out = weights;
  for (auto& [name, t] : out.tensors) {
    if (is_running_stat(name) || t.cols() == 1) continue;  // weight matrices only
    const auto n = static_cast<size_t>(t.size());
    const auto k = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));
    if (k == 0) continue;
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    // Ties (e.g. already-pruned zeros) break by position, which makes
    // repeated pruning at the same fraction pick the same entries.
    std::sort(order.begin(), order.end(), [&t](size_t a, size_t b) {
      const double ma = std::abs(t.data()[a]), mb = std::abs(t.data()[b]);
      return ma != mb ? ma < mb : a < b;
    });
    MatrixXd mask = MatrixXd::Ones(t.rows(), t.cols());
    for (size_t i = 0; i < k; ++i) mask.data()[order[i]] = 0.0;
    out.masks[name] = std::move(mask);
  }
  out.apply_masks();
  return out;
}

namespace {

// One QAT step: forward/backward under fake-quantized tensors, gradients
// applied straight through to the float weights, batch statistics advanced.
template <typename ForwardFn, typename BackwardFn>
models::TrainResult qat_train(ModelWeights pretrained,
                              const std::vector<models::TrainSample>& samples,
                              const models::TrainConfig& config, const ForwardFn& forward,
                              const BackwardFn& backward) {
  const double lr = config.learning_rate;
  auto step = [&](ModelWeights& w, const std::vector<models::ModelInput>& inputs,
                  const std::vector<int>& labels) {
    ModelWeights wq = fake_quantize_weights(w);
    MatrixXd logits;
    models::GradMap grads = backward(wq, inputs, labels, logits);
    const double loss = nn::cross_entropy(logits, labels);
    for (const auto& [name, grad] : grads) w.tensors.at(name) -= lr * grad;
    for (const auto& [name, t] : wq.tensors)
      if (is_running_stat(name)) w.tensors.at(name) = t;
    w.apply_masks();
    return loss;
  };
  auto eval = [&](ModelWeights& w, const std::vector<models::ModelInput>& inputs,
                  const std::vector<int>& labels) {
    ModelWeights wq = fake_quantize_weights(w);
    return nn::cross_entropy(forward(wq, inputs), labels);
  };
  return models::train_loop(samples, config, std::move(pretrained), step, eval);
}

}  // namespace

models::TrainResult qat_finetune(const models::ModelSpec& spec, ModelWeights pretrained,
                                 const std::vector<models::TrainSample>& samples,
                                 const models::TrainConfig& config) {
  spec.validate();
  auto forward = [&spec](ModelWeights& w, const std::vector<models::ModelInput>& inputs) {
    return models::forward_batch(spec, w, inputs, false);
  };
  auto backward = [&spec](ModelWeights& wq, const std::vector<models::ModelInput>& inputs,
                          const std::vector<int>& labels, MatrixXd& logits) {
    models::BatchCache cache;
    logits = models::forward_batch(spec, wq, inputs, true, &cache);
    return models::backward_batch(spec, wq, cache,
                                  nn::cross_entropy_backward(logits, labels));
  };
  return qat_train(std::move(pretrained), samples, config, forward, backward);
}

models::TrainResult qat_finetune(const models::FusionSpec& spec, ModelWeights pretrained,
                                 const std::vector<models::TrainSample>& samples,
                                 const models::TrainConfig& config) {
  spec.validate();
  if (spec.strategy == models::FusionStrategy::softmax_avg)
    throw ValidationError(
        "softmax_avg fusion has no joint graph to fine-tune; optimize each branch separately");
  auto forward = [&spec](ModelWeights& w, const std::vector<models::ModelInput>& inputs) {
    return models::fusion_logits(spec, w, inputs, false);
  };
  auto backward = [&spec](ModelWeights& wq, const std::vector<models::ModelInput>& inputs,
                          const std::vector<int>& labels, MatrixXd& logits) {
    models::FusionBatchCache cache;
    logits = models::fusion_logits(spec, wq, inputs, true, &cache);
    return models::fusion_backward(spec, wq, cache,
                                   nn::cross_entropy_backward(logits, labels));
  };
  return qat_train(std::move(pretrained), samples, config, forward, backward);
}

// ---- checkpoint container ----

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
}

size_t bitmap_bytes(size_t n) { return (n + 7) / 8; }

// Presence bitmap over the linear (column-major) entries, LSB first.
template <typename Pred>
std::vector<std::uint8_t> make_bitmap(size_t n, const Pred& present) {
  std::vector<std::uint8_t> bits(bitmap_bytes(n), 0);
  for (size_t i = 0; i < n; ++i)
    if (present(i)) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return bits;
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  size_t pos = 0;

  const std::uint8_t* take(size_t n) {
    if (n > bytes.size() - pos) throw IoError("checkpoint truncated");
    const std::uint8_t* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }
};

bool sparse_pays_off(size_t n, size_t nnz, size_t value_bytes) {
  const size_t zeros = n - nnz;
  return 2 * zeros >= n && bitmap_bytes(n) + nnz * value_bytes < n * value_bytes;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint) {
  json header;
  header["quantized"] = checkpoint.quantized;
  if (!checkpoint.meta.config_hash.empty()) header["config_hash"] = checkpoint.meta.config_hash;
  if (checkpoint.meta.model) header["model"] = json::parse(checkpoint.meta.model->to_json());
  if (checkpoint.meta.fusion) header["fusion"] = json::parse(checkpoint.meta.fusion->to_json());

  json tensors = json::array();
  json masks = json::array();
  std::vector<std::uint8_t> blobs;

  auto emit_mask = [&](const std::string& name, const MatrixXd& m) {
    const auto n = static_cast<size_t>(m.size());
    auto bits = make_bitmap(n, [&m](size_t i) { return m.data()[i] != 0.0; });
    masks.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    blobs.insert(blobs.end(), bits.begin(), bits.end());
  };

  if (checkpoint.quantized) {
    for (const auto& [name, qt] : checkpoint.model8.tensors) {
      const auto n = static_cast<size_t>(qt.values.size());
      const auto zp = qt.record.zero_point;
      size_t nnz = 0;
      for (size_t i = 0; i < n; ++i)
        if (qt.values.data()[i] != zp) ++nnz;
      const bool sparse = sparse_pays_off(n, nnz, 1);
      json rec{{"name", name},          {"rows", qt.values.rows()},
               {"cols", qt.values.cols()}, {"dtype", "q8"},
               {"sparse", sparse},      {"scale", qt.record.scale},
               {"zero_point", zp},      {"bit_width", qt.record.bit_width}};
      if (sparse) {
        auto bits = make_bitmap(n, [&](size_t i) { return qt.values.data()[i] != zp; });
        blobs.insert(blobs.end(), bits.begin(), bits.end());
        for (size_t i = 0; i < n; ++i)
          if (qt.values.data()[i] != zp)
            blobs.push_back(static_cast<std::uint8_t>(qt.values.data()[i]));
        rec["bytes"] = bitmap_bytes(n) + nnz;
      } else {
        for (size_t i = 0; i < n; ++i)
          blobs.push_back(static_cast<std::uint8_t>(qt.values.data()[i]));
        rec["bytes"] = n;
      }
      tensors.push_back(std::move(rec));
    }
    for (const auto& [name, m] : checkpoint.model8.masks) emit_mask(name, m);
  } else {
    for (const auto& [name, t] : checkpoint.weights.tensors) {
      const auto n = static_cast<size_t>(t.size());
      size_t nnz = 0;
      for (size_t i = 0; i < n; ++i)
        if (t.data()[i] != 0.0) ++nnz;
      const bool sparse = sparse_pays_off(n, nnz, 8);
      json rec{{"name", name}, {"rows", t.rows()}, {"cols", t.cols()},
               {"dtype", "f64"}, {"sparse", sparse}};
      if (sparse) {
        auto bits = make_bitmap(n, [&t](size_t i) { return t.data()[i] != 0.0; });
        blobs.insert(blobs.end(), bits.begin(), bits.end());
        for (size_t i = 0; i < n; ++i)
          if (t.data()[i] != 0.0) put_f64(blobs, t.data()[i]);
        rec["bytes"] = bitmap_bytes(n) + nnz * 8;
      } else {
        for (size_t i = 0; i < n; ++i) put_f64(blobs, t.data()[i]);
        rec["bytes"] = n * 8;
      }
      tensors.push_back(std::move(rec));
    }
    for (const auto& [name, m] : checkpoint.weights.masks) emit_mask(name, m);
  }
  header["tensors"] = std::move(tensors);
  header["masks"] = std::move(masks);

  const std::string head = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(sizeof(kMagic) + 4 + head.size() + blobs.size());
  const auto* magic = reinterpret_cast<const std::uint8_t*>(kMagic);
  out.insert(out.end(), magic, magic + sizeof(kMagic));
  put_u32(out, static_cast<std::uint32_t>(head.size()));
  const auto* head_bytes = reinterpret_cast<const std::uint8_t*>(head.data());
  out.insert(out.end(), head_bytes, head_bytes + head.size());
  out.insert(out.end(), blobs.begin(), blobs.end());
  return out;
}

Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  const std::uint8_t* magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("not a checkpoint stream (bad magic)");
  const std::uint32_t head_len = r.u32();
  const std::uint8_t* head_bytes = r.take(head_len);

  json header;
  try {
    header = json::parse(head_bytes, head_bytes + head_len);
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint c;
  try {
    c.quantized = header.at("quantized").get<bool>();
    if (header.contains("config_hash"))
      c.meta.config_hash = header.at("config_hash").get<std::string>();
    if (header.contains("model"))
      c.meta.model = models::ModelSpec::from_json(header.at("model").dump());
    if (header.contains("fusion"))
      c.meta.fusion = models::FusionSpec::from_json(header.at("fusion").dump());

    for (const auto& rec : header.at("tensors")) {
      const auto name = rec.at("name").get<std::string>();
      const auto rows = rec.at("rows").get<Eigen::Index>();
      const auto cols = rec.at("cols").get<Eigen::Index>();
      const auto dtype = rec.at("dtype").get<std::string>();
      const bool sparse = rec.at("sparse").get<bool>();
      const auto declared = rec.at("bytes").get<size_t>();
      if (rows < 0 || cols < 0) throw IoError("corrupt checkpoint: negative tensor shape");
      const auto n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
      if ((dtype == "q8") != c.quantized)
        throw IoError("corrupt checkpoint: tensor dtype contradicts the model kind");

      std::vector<bool> present;
      size_t nnz = n;
      if (sparse) {
        const std::uint8_t* bits = r.take(bitmap_bytes(n));
        present.resize(n);
        nnz = 0;
        for (size_t i = 0; i < n; ++i) {
          present[i] = (bits[i / 8] >> (i % 8)) & 1u;
          nnz += present[i] ? 1 : 0;
        }
      }

      if (dtype == "q8") {
        QuantizedTensor qt;
        qt.record.scale = rec.at("scale").get<double>();
        qt.record.zero_point = rec.at("zero_point").get<std::int64_t>();
        qt.record.bit_width = rec.at("bit_width").get<int>();
        const size_t expect = sparse ? bitmap_bytes(n) + nnz : n;
        if (declared != expect) throw IoError("corrupt checkpoint: tensor size mismatch");
        qt.values.resize(rows, cols);
        const auto zp8 = static_cast<std::int8_t>(
            std::clamp<std::int64_t>(qt.record.zero_point, kQMin, kQMax));
        const std::uint8_t* data = r.take(sparse ? nnz : n);
        size_t next = 0;
        for (size_t i = 0; i < n; ++i)
          qt.values.data()[i] = (!sparse || present[i])
                                    ? static_cast<std::int8_t>(data[next++])
                                    : zp8;
        if (!c.model8.tensors.emplace(name, std::move(qt)).second)
          throw IoError("corrupt checkpoint: duplicate tensor " + name);
      } else if (dtype == "f64") {
        const size_t expect = sparse ? bitmap_bytes(n) + nnz * 8 : n * 8;
        if (declared != expect) throw IoError("corrupt checkpoint: tensor size mismatch");
        MatrixXd t = MatrixXd::Zero(rows, cols);
        for (size_t i = 0; i < n; ++i)
          if (!sparse || present[i]) t.data()[i] = r.f64();
        if (!c.weights.tensors.emplace(name, std::move(t)).second)
          throw IoError("corrupt checkpoint: duplicate tensor " + name);
      } else {
        throw IoError("corrupt checkpoint: unknown dtype " + dtype);
      }
    }

    for (const auto& rec : header.at("masks")) {
      const auto name = rec.at("name").get<std::string>();
      const auto rows = rec.at("rows").get<Eigen::Index>();
      const auto cols = rec.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw IoError("corrupt checkpoint: negative mask shape");
      const auto n = static_cast<size_t>(rows) * static_cast<size_t>(cols);
      const std::uint8_t* bits = r.take(bitmap_bytes(n));
      MatrixXd m(rows, cols);
      for (size_t i = 0; i < n; ++i) m.data()[i] = ((bits[i / 8] >> (i % 8)) & 1u) ? 1.0 : 0.0;
      auto& masks = c.quantized ? c.model8.masks : c.weights.masks;
      if (!masks.emplace(name, std::move(m)).second)
        throw IoError("corrupt checkpoint: duplicate mask " + name);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("corrupt checkpoint header: ") + e.what());
  }

  if (r.pos != bytes.size()) throw IoError("corrupt checkpoint: trailing bytes");
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path);
  return parse_checkpoint(bytes);
}

// ---- latency benchmarking ----

namespace {

template <typename InferFn>
BenchmarkResult run_benchmark(const InferFn& infer, int n) {
  if (n < 1) throw ArgumentError("benchmark needs at least one timed run");
  BenchmarkResult r;
  infer();  // warm-up, untimed
  r.runs_ms.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    infer();
    const auto t1 = std::chrono::steady_clock::now();
    r.runs_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::vector<double> sorted = r.runs_ms;
  std::sort(sorted.begin(), sorted.end());
  auto rank = [&sorted](double p) {
    const auto k = static_cast<size_t>(
        std::ceil(p * static_cast<double>(sorted.size())));
    return sorted[std::max<size_t>(k, 1) - 1];
  };
  r.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) /
              static_cast<double>(sorted.size());
  r.p50_ms = rank(0.50);
  r.p95_ms = rank(0.95);
  return r;
}

}  // namespace

BenchmarkResult benchmark_inference(const models::ModelSpec& spec,
                                    const models::ModelWeights& weights,
                                    const models::ModelInput& input, int n) {
  const std::vector<models::ModelInput> batch{input};
  return run_benchmark([&] { models::infer_logits(spec, weights, batch); }, n);
}

BenchmarkResult benchmark_inference(const models::FusionSpec& spec,
                                    const models::ModelWeights& weights,
                                    const models::ModelInput& input, int n) {
  const std::vector<models::ModelInput> batch{input};
  return run_benchmark([&] { models::fusion_probs(spec, weights, batch); }, n);
}

}  // namespace convsense::deploy
