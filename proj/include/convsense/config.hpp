#pragma once

#include "convsense/dsp.hpp"
#include "convsense/fusion.hpp"

#include <cstdint>
#include <string>
#include <string_view>

namespace convsense {

// The three evaluation splits: folds over lab sessions only, folds over the
// combined lab + semi-naturalistic pool, and train-on-lab / test-on-
// semi-naturalistic.
enum class EvalSetup { lab_logo, lab_sn_logo, sn_holdout };

const char* to_string(EvalSetup setup);
EvalSetup eval_setup_from_string(const std::string& s);

// Everything one experiment needs, in one hashable record. The master seed
// fans out to named streams (dataset synthesis, per-fold training,
// bootstrap), so component randomness is independent and stable; the seed
// fields inside `synth` and `train` are derived, not user-set.
struct PipelineConfig {
  // Data source: sessions are read from dataset_dir when set, otherwise
  // synthesized from `synth` (seeded from the master seed).
  std::string dataset_dir;
  SynthSpec synth;

  dsp::PreprocessConfig preprocess;  // window length, IMU frame, audio rate

  // Model family: one single-modality architecture, or a fusion strategy
  // when `fused` is true. Presets are the down-scaled ones unless
  // `compact_models` is cleared.
  bool fused = false;
  models::ModelKind model = models::ModelKind::scnnb;
  models::FusionStrategy fusion = models::FusionStrategy::concat;
  bool compact_models = true;

  models::TrainConfig train;
  EvalSetup setup = EvalSetup::lab_logo;

  std::string out_dir = "out";
  std::uint64_t seed = 0;

  void validate() const;  // throws ValidationError / ArgumentError

  // Canonical JSON form (stable key order, derived seeds excluded).
  std::string to_json() const;
  static PipelineConfig from_json(const std::string& text);
};

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

// 16 hex digits over the canonical JSON form; stamped into every artifact
// produced under this configuration.
std::string config_hash(const PipelineConfig& config);

}  // namespace convsense
