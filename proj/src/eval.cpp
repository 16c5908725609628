#include "convsense/eval.hpp"

#include "convsense/seed.hpp"
#include "convsense/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

namespace convsense::eval {

namespace {

using json = nlohmann::json;
using models::FusionSpec;
using models::FusionStrategy;
using models::ModelInput;
using models::ModelKind;
using models::ModelSpec;
using models::TrainSample;

// One session's model-ready segments; built once and shared by every fold.
struct PreppedSession {
  const Session* session = nullptr;
  std::vector<TrainSample> samples;
  std::vector<std::string> contexts;  // parallel to samples
};

struct PreppedData {
  std::vector<PreppedSession> sessions;
  dsp::SegmentFeatures probe;  // first segment, for sizing the presets
};

PreppedData preprocess_sessions(const std::vector<Session>& sessions,
                                const PipelineConfig& config) {
  std::set<std::string> ids;
  for (const auto& s : sessions)
    if (!ids.insert(s.group_id).second)
      throw ValidationError("duplicate group id: " + s.group_id);

  PreppedData data;
  data.sessions.reserve(sessions.size());
  for (const auto& session : sessions) {
    PreppedSession p;
    p.session = &session;
    const auto segments = segment_session(session, config.preprocess.window_len_s);
    if (segments.empty())
      throw ValidationError("session " + session.group_id + " yields no segments at a " +
                            std::to_string(config.preprocess.window_len_s) + " s window");
    for (const auto& segment : segments) {
      auto features = dsp::preprocess_segment(segment, config.preprocess);
      p.samples.push_back(models::make_train_sample(features));
      p.contexts.push_back(features.context);
      if (data.sessions.empty() && p.samples.size() == 1) data.probe = std::move(features);
    }
    data.sessions.push_back(std::move(p));
  }
  return data;
}

// One fold: indices into the prepped sessions.
struct FoldPlan {
  size_t test = 0;
  std::vector<size_t> train;
};

std::vector<FoldPlan> plan_folds(const std::vector<PreppedSession>& prepped,
                                 EvalSetup setup) {
  std::vector<size_t> lab, sn;
  for (size_t i = 0; i < prepped.size(); ++i)
    (prepped[i].session->setting == Setting::lab ? lab : sn).push_back(i);

  auto logo_over = [](const std::vector<size_t>& pool) {
    std::vector<FoldPlan> folds;
    for (size_t i = 0; i < pool.size(); ++i) {
      FoldPlan f;
      f.test = pool[i];
      for (size_t j = 0; j < pool.size(); ++j)
        if (j != i) f.train.push_back(pool[j]);
      folds.push_back(std::move(f));
    }
    return folds;
  };

  switch (setup) {
    case EvalSetup::lab_logo:
      if (lab.size() < 2)
        throw ValidationError("lab_logo needs at least 2 lab sessions, found " +
                              std::to_string(lab.size()));
      return logo_over(lab);
    case EvalSetup::lab_sn_logo: {
      std::vector<size_t> all(prepped.size());
      for (size_t i = 0; i < all.size(); ++i) all[i] = i;
      if (all.size() < 2) throw ValidationError("lab_sn_logo needs at least 2 sessions");
      return logo_over(all);
    }
    case EvalSetup::sn_holdout: {
      if (sn.empty()) throw ValidationError("no semi_naturalistic sessions");
      if (lab.empty()) throw ValidationError("no lab sessions to train on");
      std::vector<FoldPlan> folds;
      for (size_t t : sn) folds.push_back(FoldPlan{t, lab});
      return folds;
    }
  }
  throw ArgumentError("unknown evaluation setup code");
}

// The held-out group must never appear in training, and sn_holdout must
// train on lab sessions only.
void check_fold_discipline(const std::vector<PreppedSession>& prepped, const FoldPlan& fold,
                           EvalSetup setup) {
  const std::string& test_id = prepped[fold.test].session->group_id;
  for (size_t i : fold.train) {
    if (prepped[i].session->group_id == test_id)
      throw ValidationError("fold " + test_id + ": held-out group found in its training set");
    if (setup == EvalSetup::sn_holdout &&
        prepped[i].session->setting == Setting::semi_naturalistic)
      throw ValidationError("fold " + test_id +
                            ": semi_naturalistic session in an sn_holdout training set");
  }
}

// Trains config's model family on `samples` and predicts `inputs`.
std::vector<int> train_and_predict(const PipelineConfig& config, const ModelSpec& mspec,
                                   const FusionSpec& fspec,
                                   const std::vector<TrainSample>& samples,
                                   const models::TrainConfig& tcfg,
                                   const std::vector<ModelInput>& inputs) {
  if (!config.fused) {
    const auto result = models::train_model(mspec, samples, tcfg);
    return models::predict(mspec, result.weights, inputs);
  }
  if (config.fusion == FusionStrategy::softmax_avg) {
    // No joint parameters: each branch trains alone and the probabilities
    // are averaged at inference time.
    const auto audio = models::train_model(fspec.audio_branch, samples, tcfg);
    models::TrainConfig imu_cfg = tcfg;
    imu_cfg.seed = seed_stream(tcfg.seed, "imu-branch");
    const auto imu = models::train_model(fspec.imu_branch, samples, imu_cfg);
    const auto merged = models::merge_softmax_avg(audio.weights, imu.weights);
    return models::fusion_predict(fspec, merged, inputs);
  }
  const auto result = models::train_fusion(fspec, samples, tcfg);
  return models::fusion_predict(fspec, result.weights, inputs);
}

double mean_of(const std::vector<FoldScores>& folds, double (*pick)(const FoldScores&)) {
  double sum = 0.0;
  for (const auto& f : folds) sum += pick(f);
  return sum / static_cast<double>(folds.size());
}

EvalReport run_logo_prepped(const PreppedData& data, const PipelineConfig& config) {
  const std::vector<PreppedSession>& prepped = data.sessions;
  const auto folds = plan_folds(prepped, config.setup);

  // Presets are sized from the shapes the preprocessing actually produced.
  const ModelSpec mspec = model_spec_for(config, data.probe);
  const FusionSpec fspec = fusion_spec_for(config, data.probe);

  EvalReport report;
  report.setup = config.setup;
  report.config_hash = config_hash(config);

  for (const auto& fold : folds) {
    check_fold_discipline(prepped, fold, config.setup);
    const PreppedSession& held_out = prepped[fold.test];
    const std::string& group = held_out.session->group_id;

    std::vector<TrainSample> train_samples;
    for (size_t i : fold.train)
      train_samples.insert(train_samples.end(), prepped[i].samples.begin(),
                           prepped[i].samples.end());

    std::vector<ModelInput> test_inputs;
    std::vector<int> test_labels;
    for (const auto& s : held_out.samples) {
      test_inputs.push_back(s.input);
      test_labels.push_back(s.label);
    }

    models::TrainConfig tcfg = config.train;
    tcfg.seed = seed_stream(config.seed, "train-" + group);

    std::vector<int> preds;
    try {
      preds = train_and_predict(config, mspec, fspec, train_samples, tcfg, test_inputs);
    } catch (const ValidationError& e) {
      throw ValidationError("fold " + group + ": " + e.what());
    } catch (const ArgumentError& e) {
      throw ArgumentError("fold " + group + ": " + e.what());
    }

    FoldScores scores;
    scores.group_id = group;
    scores.confusion = confusion_matrix(preds, test_labels);
    scores.macro = macro_scores(scores.confusion);
    scores.weighted_f1 = weighted_f1(scores.confusion);
    report.per_fold.push_back(scores);

    for (size_t i = 0; i < preds.size(); ++i)
      report.outcomes.push_back(
          SegmentOutcome{group, held_out.contexts[i], test_labels[i], preds[i]});
  }

  std::vector<int> pooled_preds, pooled_labels;
  for (const auto& o : report.outcomes) {
    pooled_preds.push_back(o.pred);
    pooled_labels.push_back(o.label);
  }
  const std::uint64_t bs_seed = seed_stream(config.seed, "bootstrap");
  auto summarize = [&](double (*pick)(const FoldScores&), const Metric& metric) {
    return MetricSummary{mean_of(report.per_fold, pick),
                         bootstrap_ci(pooled_preds, pooled_labels, metric, 200, bs_seed)};
  };
  report.macro_f1 =
      summarize([](const FoldScores& f) { return f.macro.f1; },
                [](const auto& p, const auto& l) { return macro_scores(confusion_matrix(p, l)).f1; });
  report.macro_precision = summarize(
      [](const FoldScores& f) { return f.macro.precision; },
      [](const auto& p, const auto& l) { return macro_scores(confusion_matrix(p, l)).precision; });
  report.macro_recall = summarize(
      [](const FoldScores& f) { return f.macro.recall; },
      [](const auto& p, const auto& l) { return macro_scores(confusion_matrix(p, l)).recall; });
  report.weighted_f1 =
      summarize([](const FoldScores& f) { return f.weighted_f1; },
                [](const auto& p, const auto& l) { return weighted_f1(confusion_matrix(p, l)); });
  return report;
}

}  // namespace

std::vector<Session> load_sessions(const PipelineConfig& config) {
  config.validate();
  if (config.dataset_dir.empty()) {
    SynthSpec spec = config.synth;
    spec.seed = seed_stream(config.seed, "dataset");
    return synth_dataset(spec);
  }
  std::vector<std::string> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(config.dataset_dir))
    if (entry.is_directory()) dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IoError("no session directories under " + config.dataset_dir);
  std::vector<Session> sessions;
  for (const auto& dir : dirs) sessions.push_back(ingest_session(dir));
  return sessions;
}

ModelSpec model_spec_for(const PipelineConfig& config, const dsp::SegmentFeatures& probe) {
  ModelSpec spec = config.compact_models ? ModelSpec::compact(config.model)
                                         : ModelSpec::reference(config.model);
  if (probe.imu_energy.empty()) throw ArgumentError("probe segment carries no IMU frames");
  spec.imu_len = static_cast<int>(probe.imu_energy.size()) *
                 static_cast<int>(probe.imu_energy.front().cols());
  return spec;
}

FusionSpec fusion_spec_for(const PipelineConfig& config, const dsp::SegmentFeatures& probe) {
  FusionSpec spec = config.compact_models ? FusionSpec::compact(config.fusion)
                                          : FusionSpec::reference(config.fusion);
  if (probe.imu_energy.empty()) throw ArgumentError("probe segment carries no IMU frames");
  spec.imu_frames = static_cast<int>(probe.imu_energy.size());
  spec.imu_branch.imu_len = spec.imu_frames * static_cast<int>(probe.imu_energy.front().cols());
  return spec;
}

EvalReport run_logo(const std::vector<Session>& sessions, const PipelineConfig& config) {
  config.validate();
  return run_logo_prepped(preprocess_sessions(sessions, config), config);
}

std::vector<WindowReport> sweep_window(const std::vector<Session>& sessions,
                                       const PipelineConfig& config,
                                       const std::vector<double>& lengths_s) {
  std::vector<WindowReport> rows;
  for (double len : lengths_s) {
    PipelineConfig c = config;
    c.preprocess.window_len_s = len;
    rows.push_back(WindowReport{len, run_logo(sessions, c)});
  }
  return rows;
}

std::vector<FrameReport> sweep_imu_frame(const std::vector<Session>& sessions,
                                         const PipelineConfig& config,
                                         const std::vector<double>& frames_s) {
  std::vector<FrameReport> rows;
  for (double f : frames_s) {
    PipelineConfig c = config;
    c.preprocess.imu_frame_s = f;
    rows.push_back(FrameReport{f, run_logo(sessions, c)});
  }
  return rows;
}

std::vector<RateReport> sweep_sampling_rate(const std::vector<Session>& sessions,
                                            const PipelineConfig& config,
                                            const std::vector<double>& rates_hz) {
  double source_rate = 0.0;
  for (const auto& s : sessions) source_rate = std::max(source_rate, s.audio_rate_hz);

  std::vector<RateReport> rows;
  for (double rate : rates_hz) {
    PipelineConfig base = config;
    // At or above the source bandwidth there is nothing to remove.
    base.preprocess.audio_target_rate_hz = rate < source_rate ? rate : 0.0;

    PipelineConfig audio_only = base;
    audio_only.fused = false;
    audio_only.model = ModelKind::pure_acoustic;

    PipelineConfig multimodal = base;
    multimodal.fused = true;

    // Both families consume identical tensors; preprocess once per rate.
    const auto prepped = preprocess_sessions(sessions, base);
    rows.push_back(RateReport{rate, "audio_only", run_logo_prepped(prepped, audio_only)});
    rows.push_back(RateReport{rate, "multimodal", run_logo_prepped(prepped, multimodal)});
  }
  return rows;
}

const std::vector<std::string>& known_contexts() {
  static const std::vector<std::string> tags{"regular_conversation", "conversation_eating",
                                             "reading_aloud", "watching_video",
                                             "music_background"};
  return tags;
}

std::vector<ContextScores> eval_by_context(const EvalReport& report,
                                           const std::vector<std::string>& tags) {
  const auto& known = known_contexts();
  for (const auto& tag : tags)
    if (std::find(known.begin(), known.end(), tag) == known.end())
      throw ArgumentError("unknown context tag: " + tag);

  std::vector<ContextScores> rows;
  for (const auto& tag : tags) {
    std::vector<int> preds, labels;
    for (const auto& o : report.outcomes)
      if (o.context == tag) {
        preds.push_back(o.pred);
        labels.push_back(o.label);
      }
    if (preds.empty()) {
      std::fprintf(stderr, "warning: context %s has no segments; omitted\n", tag.c_str());
      continue;
    }
    ContextScores row;
    row.context = tag;
    row.segments = static_cast<long long>(preds.size());
    const ConfusionMatrix cm = confusion_matrix(preds, labels);
    row.macro = macro_scores(cm);
    row.weighted_f1 = weighted_f1(cm);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ContextScores> eval_by_context(const EvalReport& report) {
  return eval_by_context(report, known_contexts());
}

std::string to_json(const EvalReport& report) {
  json j;
  j["setup"] = to_string(report.setup);
  j["config_hash"] = report.config_hash;
  j["n_folds"] = report.per_fold.size();
  j["n_segments"] = report.outcomes.size();

  json folds = json::array();
  for (const auto& f : report.per_fold) {
    json cm = json::array();
    for (int r = 0; r < 3; ++r) {
      json row = json::array();
      for (int c = 0; c < 3; ++c) row.push_back(f.confusion.counts(r, c));
      cm.push_back(std::move(row));
    }
    folds.push_back({{"group_id", f.group_id},
                     {"macro_f1", f.macro.f1},
                     {"macro_precision", f.macro.precision},
                     {"macro_recall", f.macro.recall},
                     {"weighted_f1", f.weighted_f1},
                     {"confusion", std::move(cm)}});
  }
  j["per_fold"] = std::move(folds);

  auto summary = [](const MetricSummary& m) {
    return json{{"mean", m.mean},
                {"ci_lo", m.ci.lo},
                {"ci_hi", m.ci.hi},
                {"ci_redraws", m.ci.n_redraws}};
  };
  j["aggregate"] = {{"macro_f1", summary(report.macro_f1)},
                    {"macro_precision", summary(report.macro_precision)},
                    {"macro_recall", summary(report.macro_recall)},
                    {"weighted_f1", summary(report.weighted_f1)}};
  return j.dump(2);
}

}  // namespace convsense::eval
