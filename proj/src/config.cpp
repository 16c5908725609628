#include "convsense/config.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cinttypes>
#include <cstdio>

namespace convsense {

namespace {

using json = nlohmann::json;

}  // namespace

const char* to_string(EvalSetup setup) {
  switch (setup) {
    case EvalSetup::lab_logo: return "lab_logo";
    case EvalSetup::lab_sn_logo: return "lab_sn_logo";
    case EvalSetup::sn_holdout: return "sn_holdout";
  }
  throw ArgumentError("unknown evaluation setup code");
}

EvalSetup eval_setup_from_string(const std::string& s) {
  if (s == "lab_logo") return EvalSetup::lab_logo;
  if (s == "lab_sn_logo") return EvalSetup::lab_sn_logo;
  if (s == "sn_holdout") return EvalSetup::sn_holdout;
  throw ArgumentError("unknown evaluation setup: " + s);
}

void PipelineConfig::validate() const {
  if (dataset_dir.empty()) synth.validate();
  if (!(preprocess.window_len_s > 0))
    throw ValidationError("window length must be positive");
  if (!(preprocess.imu_frame_s > 0)) throw ValidationError("IMU frame length must be positive");
  if (preprocess.imu_frame_s > preprocess.window_len_s)
    throw ValidationError("IMU frame is longer than the prediction window");
  if (preprocess.audio_target_rate_hz < 0)
    throw ValidationError("audio target rate must be non-negative");
  train.validate();
}

std::string PipelineConfig::to_json() const {
  json j;
  j["dataset_dir"] = dataset_dir;
  j["synth"] = {{"n_groups", synth.n_groups},
                {"session_len_s", synth.session_len_s},
                {"class_mix", synth.class_mix},
                {"audio_snr_db", synth.audio_snr_db},
                {"gesture_rate_hz", synth.gesture_rate_hz}};
  j["preprocess"] = {{"audio_target_rate_hz", preprocess.audio_target_rate_hz},
                     {"window_len_s", preprocess.window_len_s},
                     {"imu_frame_s", preprocess.imu_frame_s}};
  j["fused"] = fused;
  j["model"] = models::to_string(model);
  j["fusion"] = models::to_string(fusion);
  j["compact_models"] = compact_models;
  j["train"] = {{"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"early_stop_patience", train.early_stop_patience}};
  j["setup"] = to_string(setup);
  j["out_dir"] = out_dir;
  j["seed"] = seed;
  return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("cannot parse pipeline config: ") + e.what());
  }
  PipelineConfig c;
  try {
    if (j.contains("dataset_dir")) c.dataset_dir = j.at("dataset_dir").get<std::string>();
    if (j.contains("synth")) {
      const json& s = j.at("synth");
      if (s.contains("n_groups")) c.synth.n_groups = s.at("n_groups").get<int>();
      if (s.contains("session_len_s"))
        c.synth.session_len_s = s.at("session_len_s").get<double>();
      if (s.contains("class_mix"))
        c.synth.class_mix = s.at("class_mix").get<std::array<double, 3>>();
      if (s.contains("audio_snr_db")) c.synth.audio_snr_db = s.at("audio_snr_db").get<double>();
      if (s.contains("gesture_rate_hz"))
        c.synth.gesture_rate_hz = s.at("gesture_rate_hz").get<double>();
    }
    if (j.contains("preprocess")) {
      const json& p = j.at("preprocess");
      if (p.contains("audio_target_rate_hz"))
        c.preprocess.audio_target_rate_hz = p.at("audio_target_rate_hz").get<double>();
      if (p.contains("window_len_s"))
        c.preprocess.window_len_s = p.at("window_len_s").get<double>();
      if (p.contains("imu_frame_s")) c.preprocess.imu_frame_s = p.at("imu_frame_s").get<double>();
    }
    if (j.contains("fused")) c.fused = j.at("fused").get<bool>();
    if (j.contains("model")) c.model = models::model_kind_from_string(j.at("model"));
    if (j.contains("fusion")) c.fusion = models::fusion_strategy_from_string(j.at("fusion"));
    if (j.contains("compact_models")) c.compact_models = j.at("compact_models").get<bool>();
    if (j.contains("train")) {
      const json& t = j.at("train");
      if (t.contains("learning_rate")) c.train.learning_rate = t.at("learning_rate").get<double>();
      if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<int>();
      if (t.contains("batch_size")) c.train.batch_size = t.at("batch_size").get<int>();
      if (t.contains("early_stop_patience"))
        c.train.early_stop_patience = t.at("early_stop_patience").get<int>();
    }
    if (j.contains("setup")) c.setup = eval_setup_from_string(j.at("setup"));
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;  // 0xcbf29ce484222325
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const PipelineConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, fnv1a64(config.to_json()));
  return buf;
}

}  // namespace convsense
