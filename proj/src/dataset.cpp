#include "convsense/dataset.hpp"

#include "convsense/wav.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace convsense {

namespace {

void check_spans(const std::vector<AnnotationSpan>& spans) {
  double prev_end = -std::numeric_limits<double>::infinity();
  for (const auto& span : spans) {
    if (!(span.end_s > span.start_s)) throw ValidationError("annotation span with end <= start");
    if (span.start_s < prev_end - 1e-12)
      throw ValidationError("overlapping or unsorted annotation spans");
    prev_end = span.end_s;
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<std::pair<double, ClassLabel>> aggregate_labels(
    const std::vector<AnnotationSpan>& spans, double window_len_s, double session_len_s) {
  if (window_len_s <= 0) throw ArgumentError("aggregate_labels: window_len_s must be positive");
  check_spans(spans);

  const int n_windows = static_cast<int>(std::floor(session_len_s / window_len_s + 1e-9));
  std::vector<std::pair<double, ClassLabel>> out;
  out.reserve(n_windows);

  for (int w = 0; w < n_windows; ++w) {
    const double w0 = w * window_len_s;
    const double w1 = w0 + window_len_s;
    std::array<double, kNumClasses> duration{};
    double covered = 0.0;
    for (const auto& span : spans) {
      const double lo = std::max(w0, span.start_s);
      const double hi = std::min(w1, span.end_s);
      if (hi > lo) {
        duration[static_cast<int>(span.label)] += hi - lo;
        covered += hi - lo;
      }
    }
    // Gaps count as background noise.
    duration[static_cast<int>(ClassLabel::background_noise)] += window_len_s - covered;
    // argmax with ties broken by class priority (enum order).
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (duration[c] > duration[best] + 1e-12) best = c;
    out.emplace_back(w0, static_cast<ClassLabel>(best));
  }
  return out;
}

std::vector<std::string> aggregate_contexts(const std::vector<AnnotationSpan>& spans,
                                            double window_len_s, double session_len_s) {
  if (window_len_s <= 0) throw ArgumentError("aggregate_contexts: window_len_s must be positive");
  check_spans(spans);
  const int n_windows = static_cast<int>(std::floor(session_len_s / window_len_s + 1e-9));
  std::vector<std::string> out;
  out.reserve(n_windows);
  for (int w = 0; w < n_windows; ++w) {
    const double w0 = w * window_len_s;
    const double w1 = w0 + window_len_s;
    std::map<std::string, double> duration;
    for (const auto& span : spans) {
      if (span.context.empty()) continue;
      const double lo = std::max(w0, span.start_s);
      const double hi = std::min(w1, span.end_s);
      if (hi > lo) duration[span.context] += hi - lo;
    }
    std::string best;
    double best_d = 0.0;
    for (const auto& [ctx, d] : duration)
      if (d > best_d + 1e-12) {
        best = ctx;
        best_d = d;
      }
    out.push_back(best);
  }
  return out;
}

Session ingest_session(const std::string& dir_path) {
  const fs::path dir(dir_path);
  for (const char* name : {"audio.wav", "imu.csv", "labels.csv", "meta.json"})
    if (!fs::exists(dir / name))
      throw IoError("missing " + std::string(name) + " in " + dir_path);

  Session s;

  {
    std::ifstream meta(dir / "meta.json");
    json j = json::parse(meta);
    s.group_id = j.at("group_id").get<std::string>();
    s.setting = setting_from_string(j.at("setting").get<std::string>());
    s.watch_hand = j.value("watch_hand", "");
    s.handedness = j.value("handedness", "");
    s.gender = j.value("gender", "");
  }

  {
    WavData wav = read_wav((dir / "audio.wav").string());
    s.audio = std::move(wav.samples);
    s.audio_rate_hz = wav.sample_rate_hz;
  }

  {
    std::ifstream in(dir / "imu.csv");
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty imu.csv in " + dir_path);
    auto header = split_csv_line(line);
    if (header.size() != 7 || header[0] != "t_s")
      throw ValidationError("imu.csv in " + dir_path + ": expected 7 columns t_s,ax,ay,az,gx,gy,gz, got " +
                            std::to_string(header.size()));
    std::vector<std::array<double, 6>> rows;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() != 7)
        throw ValidationError("imu.csv in " + dir_path + ": row with " + std::to_string(f.size()) +
                              " columns (IMU channel-count mismatch)");
      std::array<double, 6> row;
      for (int c = 0; c < 6; ++c) row[c] = std::stod(f[c + 1]);
      rows.push_back(row);
    }
    s.imu.resize(6, static_cast<Eigen::Index>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i)
      for (int c = 0; c < 6; ++c) s.imu(c, static_cast<Eigen::Index>(i)) = rows[i][c];
    s.imu_rate_hz = 55.0;
  }

  {
    std::ifstream in(dir / "labels.csv");
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty labels.csv in " + dir_path);
    auto header = split_csv_line(line);
    const bool has_context = header.size() == 4 && header[3] == "context";
    if (!(header.size() == 3 || has_context))
      throw ValidationError("labels.csv in " + dir_path + ": expected header start_s,end_s,label[,context]");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto f = split_csv_line(line);
      if (f.size() != header.size())
        throw ValidationError("labels.csv in " + dir_path + ": inconsistent column count");
      AnnotationSpan span(std::stod(f[0]), std::stod(f[1]), class_label_from_string(f[2]),
                          has_context ? f[3] : std::string());
      s.annotations.push_back(std::move(span));
    }
    check_spans(s.annotations);
  }

  s.validate();
  return s;
}

void export_session(const Session& session, const std::string& dir_path) {
  session.validate();
  const fs::path dir(dir_path);
  fs::create_directories(dir);

  write_wav((dir / "audio.wav").string(), session.audio,
            static_cast<int>(std::lround(session.audio_rate_hz)));

  {
    std::ofstream out(dir / "imu.csv");
    out << "t_s,ax,ay,az,gx,gy,gz\n";
    char buf[64];
    for (Eigen::Index i = 0; i < session.imu.cols(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(i) / session.imu_rate_hz);
      out << buf;
      for (int c = 0; c < 6; ++c) {
        std::snprintf(buf, sizeof(buf), ",%.6f", session.imu(c, i));
        out << buf;
      }
      out << "\n";
    }
  }

  {
    std::ofstream out(dir / "labels.csv");
    out << "start_s,end_s,label,context\n";
    char buf[64];
    for (const auto& span : session.annotations) {
      std::snprintf(buf, sizeof(buf), "%.3f,%.3f,", span.start_s, span.end_s);
      out << buf << to_string(span.label) << "," << span.context << "\n";
    }
  }

  {
    json j;
    j["group_id"] = session.group_id;
    j["setting"] = to_string(session.setting);
    j["watch_hand"] = session.watch_hand;
    j["handedness"] = session.handedness;
    j["gender"] = session.gender;
    std::ofstream out(dir / "meta.json");
    out << j.dump(2) << "\n";
  }
}

std::vector<Fold> split_logo(const std::vector<Session>& sessions) {
  if (sessions.size() < 2) throw ArgumentError("split_logo: need at least 2 sessions");
  std::set<std::string> ids;
  for (const auto& s : sessions)
    if (!ids.insert(s.group_id).second)
      throw ValidationError("split_logo: duplicate group_id '" + s.group_id + "'");

  std::vector<Fold> folds;
  folds.reserve(sessions.size());
  for (size_t i = 0; i < sessions.size(); ++i) {
    Fold fold;
    fold.test = &sessions[i];
    for (size_t j = 0; j < sessions.size(); ++j)
      if (j != i) fold.train.push_back(&sessions[j]);
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::vector<LabeledSegment> segment_session(const Session& session, double window_len_s) {
  if (window_len_s <= 0) throw ArgumentError("segment_session: window_len_s must be positive");
  session.validate();

  const double usable_s = std::min(session.audio_duration_s(), session.imu_duration_s());
  auto labels = aggregate_labels(session.annotations, window_len_s, usable_s);
  auto contexts = aggregate_contexts(session.annotations, window_len_s, usable_s);

  const auto audio_win = static_cast<Eigen::Index>(std::lround(window_len_s * session.audio_rate_hz));
  const auto imu_win = static_cast<Eigen::Index>(std::lround(window_len_s * session.imu_rate_hz));

  std::vector<LabeledSegment> segments;
  segments.reserve(labels.size());
  for (size_t w = 0; w < labels.size(); ++w) {
    const auto [start_s, label] = labels[w];
    const auto a0 = static_cast<Eigen::Index>(std::lround(start_s * session.audio_rate_hz));
    const auto i0 = static_cast<Eigen::Index>(std::lround(start_s * session.imu_rate_hz));
    if (a0 + audio_win > session.audio.size() || i0 + imu_win > session.imu.cols()) break;
    LabeledSegment seg;
    seg.session_ref = session.group_id;
    seg.start_s = start_s;
    seg.window_len_s = window_len_s;
    seg.audio_slice = session.audio.segment(a0, audio_win);
    seg.imu_slice = session.imu.middleCols(i0, imu_win);
    seg.label = label;
    seg.context = contexts[w];
    segments.push_back(std::move(seg));
  }
  return segments;
}

}  // namespace convsense
