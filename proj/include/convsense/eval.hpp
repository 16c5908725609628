#pragma once

#include "convsense/config.hpp"
#include "convsense/dataset.hpp"
#include "convsense/metrics.hpp"

#include <string>
#include <vector>

namespace convsense::eval {

// Scores of one held-out group.
struct FoldScores {
  std::string group_id;
  MacroScores macro;
  double weighted_f1 = 0.0;
  ConfusionMatrix confusion;
};

// One evaluated test segment, kept for pooled intervals and the
// per-context breakdown.
struct SegmentOutcome {
  std::string group_id;
  std::string context;
  int label = 0;
  int pred = 0;
};

struct MetricSummary {
  double mean = 0.0;     // arithmetic mean of the per-fold values
  BootstrapInterval ci;  // percentile bootstrap over the pooled segments
};

struct EvalReport {
  EvalSetup setup = EvalSetup::lab_logo;
  std::vector<FoldScores> per_fold;
  std::vector<SegmentOutcome> outcomes;  // every test segment, all folds
  MetricSummary macro_f1, macro_precision, macro_recall, weighted_f1;
  std::string config_hash;
};

std::string to_json(const EvalReport& report);

// Sessions for `config`: ingested from config.dataset_dir, or synthesized
// with the master seed's "dataset" stream when no directory is set.
std::vector<Session> load_sessions(const PipelineConfig& config);

// Preset sized to the tensor shapes `probe` actually produces, so the
// dense stages match the preprocessing knobs (IMU strip length, frame
// count) instead of assuming the defaults.
models::ModelSpec model_spec_for(const PipelineConfig& config, const dsp::SegmentFeatures& probe);
models::FusionSpec fusion_spec_for(const PipelineConfig& config, const dsp::SegmentFeatures& probe);

// Leave-one-group-out evaluation of config's model family under
// config.setup. Every session is preprocessed once; each fold trains from
// scratch on the training groups (softmax-average fusion trains its two
// branches separately and merges them) and scores the held-out group.
// Training groups and the held-out group are always disjoint, and the
// sn_holdout setup never trains on a semi-naturalistic session. Training
// errors carry the fold's group id. Aggregate means are the arithmetic
// means of the per-fold scores; intervals are 200-round percentile
// bootstraps over the pooled test segments.
EvalReport run_logo(const std::vector<Session>& sessions, const PipelineConfig& config);

// ---- sensitivity studies ----

struct WindowReport {
  double window_len_s = 0.0;
  EvalReport report;
};

// Reruns run_logo per prediction-window length (labels are re-aggregated
// from the annotation spans at each length).
std::vector<WindowReport> sweep_window(const std::vector<Session>& sessions,
                                       const PipelineConfig& config,
                                       const std::vector<double>& lengths_s = {10.0, 20.0,
                                                                               30.0});

struct FrameReport {
  double frame_s = 0.0;
  EvalReport report;
};

// Reruns run_logo per IMU frame length at a fixed prediction window; a
// frame longer than the window is an error.
std::vector<FrameReport> sweep_imu_frame(
    const std::vector<Session>& sessions, const PipelineConfig& config,
    const std::vector<double>& frames_s = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0});

struct RateReport {
  double rate_hz = 0.0;
  std::string family;  // "audio_only" or "multimodal"
  EvalReport report;
};

// Band-limits the audio to each rate (rates at or above the source keep
// the full bandwidth) and evaluates two model families per rate: the
// audio-only architecture and config's fusion strategy. Preprocessed
// tensors are shared between the two families of a rate.
std::vector<RateReport> sweep_sampling_rate(const std::vector<Session>& sessions,
                                            const PipelineConfig& config,
                                            const std::vector<double>& rates_hz = {
                                                16000.0, 2000.0, 1000.0});

// The activity tags the synthetic generator and the dataset layout emit.
const std::vector<std::string>& known_contexts();

struct ContextScores {
  std::string context;
  long long segments = 0;
  MacroScores macro;
  double weighted_f1 = 0.0;
};

// Per-context scores over a finished report's pooled test segments.
// Requested tags must be known; tags with no segments are omitted with a
// warning on stderr.
std::vector<ContextScores> eval_by_context(const EvalReport& report,
                                           const std::vector<std::string>& tags);
std::vector<ContextScores> eval_by_context(const EvalReport& report);

}  // namespace convsense::eval
