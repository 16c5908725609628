#pragma once

#include "convsense/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace convsense {

// One label per consecutive window of length window_len_s. Each window gets
// the class covering the greatest total duration inside it; unannotated time
// counts as background_noise. Windows truncated at session end are dropped.
// Ties break by priority conversation > other_speech > background_noise.
std::vector<std::pair<double, ClassLabel>> aggregate_labels(
    const std::vector<AnnotationSpan>& spans, double window_len_s, double session_len_s);

// Dominant context tag per window, same majority rule over tagged spans;
// empty when no tagged span intersects the window.
std::vector<std::string> aggregate_contexts(const std::vector<AnnotationSpan>& spans,
                                            double window_len_s, double session_len_s);

// Reads one session from the dataset directory layout:
//   audio.wav  (mono 16-bit PCM), imu.csv, labels.csv, meta.json
Session ingest_session(const std::string& dir_path);

// Writes a session in the same layout. Round-trips bit-identically with
// ingest_session. Creates the directory if needed.
void export_session(const Session& session, const std::string& dir_path);

struct Fold {
  std::vector<const Session*> train;
  const Session* test = nullptr;
};

// Leave-one-group-out folds: one fold per session, test excluded from train.
std::vector<Fold> split_logo(const std::vector<Session>& sessions);

// Cuts a session into consecutive labeled windows (audio + IMU slices plus
// the aggregated label/context). Trailing partial windows are dropped.
std::vector<LabeledSegment> segment_session(const Session& session, double window_len_s);

}  // namespace convsense
