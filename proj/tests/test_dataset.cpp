#include <doctest.h>

#include "convsense/dataset.hpp"
#include "convsense/seed.hpp"
#include "convsense/synth.hpp"
#include "convsense/wav.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace convsense;

namespace {

// Independent duration oracle: sample the timeline at 1 ms midpoints and
// count per-class coverage per window. Exact whenever span edges sit on a
// coarser grid than 1 ms.
std::vector<ClassLabel> sampled_majority(const std::vector<AnnotationSpan>& spans,
                                         double window_len_s, double session_len_s) {
  const double dt = 1e-3;
  const int n_windows = static_cast<int>(session_len_s / window_len_s + 1e-9);
  std::vector<ClassLabel> out;
  for (int w = 0; w < n_windows; ++w) {
    double counts[3] = {0, 0, 0};
    const double w0 = w * window_len_s;
    const auto n_steps = static_cast<long>(std::llround(window_len_s / dt));
    for (long i = 0; i < n_steps; ++i) {
      const double t = w0 + (i + 0.5) * dt;
      ClassLabel label = ClassLabel::background_noise;
      for (const auto& sp : spans)
        if (t >= sp.start_s && t < sp.end_s) {
          label = sp.label;
          break;
        }
      counts[static_cast<int>(label)] += dt;
    }
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (counts[c] > counts[best] + 1e-9) best = c;
    out.push_back(static_cast<ClassLabel>(best));
  }
  return out;
}

Session tiny_session(const std::string& id, double len_s = 2.0) {
  Session s;
  s.group_id = id;
  s.audio = VectorXd::Zero(static_cast<Eigen::Index>(len_s * 16000));
  s.imu = MatrixXd::Zero(6, static_cast<Eigen::Index>(len_s * 55));
  s.annotations.emplace_back(0.0, len_s, ClassLabel::background_noise);
  return s;
}

std::filesystem::path fresh_temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("convsense_test_" + tag);
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("aggregate_labels: majority duration within each window") {
  SUBCASE("7 s conversation vs 3 s background picks conversation") {
    std::vector<AnnotationSpan> spans{{0.0, 7.0, ClassLabel::conversation},
                                      {7.0, 10.0, ClassLabel::background_noise}};
    auto got = aggregate_labels(spans, 10.0, 10.0);
    REQUIRE(got.size() == 1);
    CHECK(got[0].first == doctest::Approx(0.0));
    CHECK(got[0].second == ClassLabel::conversation);
  }
  SUBCASE("window fully covered by one span keeps that label") {
    std::vector<AnnotationSpan> spans{{0.0, 30.0, ClassLabel::other_speech}};
    auto got = aggregate_labels(spans, 30.0, 30.0);
    REQUIRE(got.size() == 1);
    CHECK(got[0].second == ClassLabel::other_speech);
  }
  SUBCASE("12 s / 14 s / 4 s split picks the 14 s class") {
    std::vector<AnnotationSpan> spans{{0.0, 12.0, ClassLabel::conversation},
                                      {12.0, 26.0, ClassLabel::other_speech},
                                      {26.0, 30.0, ClassLabel::background_noise}};
    auto got = aggregate_labels(spans, 30.0, 30.0);
    REQUIRE(got.size() == 1);
    CHECK(got[0].second == ClassLabel::other_speech);
  }
  SUBCASE("unannotated time counts as background") {
    std::vector<AnnotationSpan> spans{{0.0, 4.0, ClassLabel::conversation}};
    auto got = aggregate_labels(spans, 10.0, 10.0);
    REQUIRE(got.size() == 1);
    CHECK(got[0].second == ClassLabel::background_noise);
  }
  SUBCASE("exact tie breaks toward conversation, then other_speech") {
    std::vector<AnnotationSpan> spans{{0.0, 5.0, ClassLabel::background_noise},
                                      {5.0, 10.0, ClassLabel::conversation}};
    auto got = aggregate_labels(spans, 10.0, 10.0);
    CHECK(got.at(0).second == ClassLabel::conversation);

    std::vector<AnnotationSpan> spans2{{0.0, 5.0, ClassLabel::background_noise},
                                       {5.0, 10.0, ClassLabel::other_speech}};
    CHECK(aggregate_labels(spans2, 10.0, 10.0).at(0).second == ClassLabel::other_speech);
  }
  SUBCASE("trailing partial window is dropped") {
    std::vector<AnnotationSpan> spans{{0.0, 35.0, ClassLabel::conversation}};
    auto got = aggregate_labels(spans, 30.0, 35.0);
    CHECK(got.size() == 1);
  }
  SUBCASE("window start times step by window_len_s") {
    std::vector<AnnotationSpan> spans{{0.0, 60.0, ClassLabel::conversation}};
    auto got = aggregate_labels(spans, 20.0, 60.0);
    REQUIRE(got.size() == 3);
    CHECK(got[1].first == doctest::Approx(20.0));
    CHECK(got[2].first == doctest::Approx(40.0));
  }
  SUBCASE("overlapping spans are rejected") {
    std::vector<AnnotationSpan> spans{{0.0, 6.0, ClassLabel::conversation},
                                      {5.0, 10.0, ClassLabel::other_speech}};
    CHECK_THROWS_AS(aggregate_labels(spans, 10.0, 10.0), ValidationError);
  }
  SUBCASE("non-positive window length is rejected") {
    std::vector<AnnotationSpan> spans{{0.0, 10.0, ClassLabel::conversation}};
    CHECK_THROWS_AS(aggregate_labels(spans, 0.0, 10.0), ArgumentError);
    CHECK_THROWS_AS(aggregate_labels(spans, -5.0, 10.0), ArgumentError);
  }
}

TEST_CASE("aggregate_labels matches a timeline-sampling oracle on random span sets") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double session_len = 90.0;
    std::vector<AnnotationSpan> spans;
    double t = 0.0;
    while (t < session_len - 0.02) {
      // Edges on a 10 ms grid so the 1 ms sampling oracle is exact.
      double len = 0.01 * std::llround((0.5 + 11.0 * unit(rng)) / 0.01);
      len = std::min(len, session_len - t);
      const auto label = static_cast<ClassLabel>(std::min(2, static_cast<int>(3 * unit(rng))));
      if (unit(rng) < 0.85) spans.emplace_back(t, t + len, label);  // else leave a gap
      t += len;
    }
    for (double window : {10.0, 30.0}) {
      auto got = aggregate_labels(spans, window, session_len);
      auto expect = sampled_majority(spans, window, session_len);
      REQUIRE(got.size() == expect.size());
      for (size_t i = 0; i < got.size(); ++i) {
        // Skip windows where the top two classes are within oracle resolution.
        double counts[3] = {0, 0, 0};
        for (const auto& sp : spans) {
          const double lo = std::max(sp.start_s, i * window);
          const double hi = std::min(sp.end_s, (i + 1) * window);
          if (hi > lo) counts[static_cast<int>(sp.label)] += hi - lo;
        }
        counts[2] += window - counts[0] - counts[1] - counts[2];
        std::vector<double> sorted(counts, counts + 3);
        std::sort(sorted.begin(), sorted.end());
        if (sorted[2] - sorted[1] < 1e-6) continue;
        CHECK(got[i].second == expect[i]);
      }
    }
  }
}

TEST_CASE("aggregate_contexts picks the dominant tag and defaults to empty") {
  std::vector<AnnotationSpan> spans{
      {0.0, 12.0, ClassLabel::conversation, "regular_conversation"},
      {12.0, 30.0, ClassLabel::conversation, "conversation_eating"},
      {30.0, 60.0, ClassLabel::background_noise, ""}};
  auto got = aggregate_contexts(spans, 30.0, 60.0);
  REQUIRE(got.size() == 2);
  CHECK(got[0] == "conversation_eating");
  CHECK(got[1] == "");
}

TEST_CASE("split_logo: one fold per session, test never in train") {
  SUBCASE("11 sessions give 11 folds") {
    std::vector<Session> sessions;
    for (int i = 0; i < 11; ++i) sessions.push_back(tiny_session("g" + std::to_string(i)));
    auto folds = split_logo(sessions);
    REQUIRE(folds.size() == 11);
    std::set<std::string> test_ids;
    for (const auto& fold : folds) {
      REQUIRE(fold.test != nullptr);
      test_ids.insert(fold.test->group_id);
      CHECK(fold.train.size() == 10);
      for (const auto* tr : fold.train) CHECK(tr->group_id != fold.test->group_id);
    }
    CHECK(test_ids.size() == 11);
  }
  SUBCASE("2 sessions give 2 folds with train size 1") {
    std::vector<Session> sessions{tiny_session("a"), tiny_session("b")};
    auto folds = split_logo(sessions);
    REQUIRE(folds.size() == 2);
    CHECK(folds[0].train.size() == 1);
    CHECK(folds[1].train.size() == 1);
  }
  SUBCASE("4 sessions give 4 folds") {
    std::vector<Session> sessions;
    for (int i = 0; i < 4; ++i) sessions.push_back(tiny_session("s" + std::to_string(i)));
    CHECK(split_logo(sessions).size() == 4);
  }
  SUBCASE("duplicate group ids are rejected") {
    std::vector<Session> sessions{tiny_session("same"), tiny_session("same")};
    CHECK_THROWS_AS(split_logo(sessions), ValidationError);
  }
  SUBCASE("fewer than two sessions is an error") {
    std::vector<Session> one{tiny_session("solo")};
    CHECK_THROWS_AS(split_logo(one), ArgumentError);
  }
}

TEST_CASE("seed_stream: stable, name-sensitive, seed-sensitive") {
  CHECK(seed_stream(42, "alpha") == seed_stream(42, "alpha"));
  CHECK(seed_stream(42, "alpha") != seed_stream(42, "beta"));
  CHECK(seed_stream(42, "alpha") != seed_stream(43, "alpha"));
  auto rng_a = make_rng(1, "x");
  auto rng_b = make_rng(1, "x");
  CHECK(rng_a() == rng_b());
}

TEST_CASE("wav round-trip preserves samples to 16-bit precision") {
  auto dir = fresh_temp_dir("wav");
  std::filesystem::create_directories(dir);
  const auto path = (dir / "tone.wav").string();

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> amp(-0.9, 0.9);
  VectorXd signal(1600);
  for (Eigen::Index i = 0; i < signal.size(); ++i) signal[i] = amp(rng);

  write_wav(path, signal, 16000);
  auto [read, rate] = read_wav(path);
  CHECK(rate == doctest::Approx(16000.0));
  REQUIRE(read.size() == signal.size());
  CHECK((read - signal).cwiseAbs().maxCoeff() < 1.0 / 32768.0 + 1e-12);

  SUBCASE("malformed file is rejected") {
    std::ofstream bad(dir / "bad.wav", std::ios::binary);
    bad << "not a wav at all";
    bad.close();
    CHECK_THROWS_AS(read_wav((dir / "bad.wav").string()), IoError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("synth_session is deterministic and honors the spec") {
  SynthSpec spec;
  spec.n_groups = 2;
  spec.session_len_s = 60.0;
  spec.seed = 11;

  auto a = synth_session(spec, 0);
  auto b = synth_session(spec, 0);
  CHECK(a.audio == b.audio);
  CHECK(a.imu == b.imu);
  REQUIRE(a.annotations.size() == b.annotations.size());
  for (size_t i = 0; i < a.annotations.size(); ++i) {
    CHECK(a.annotations[i].start_s == b.annotations[i].start_s);
    CHECK(a.annotations[i].label == b.annotations[i].label);
    CHECK(a.annotations[i].context == b.annotations[i].context);
  }

  SUBCASE("different groups differ") {
    auto c = synth_session(spec, 1);
    CHECK(a.audio != c.audio);
  }
  SUBCASE("shapes and rates match the requested duration") {
    CHECK(a.audio.size() == 60 * 16000);
    CHECK(a.imu.rows() == 6);
    CHECK(a.imu.cols() == 60 * 55);
    CHECK_NOTHROW(a.validate());
  }
  SUBCASE("out-of-range group index is rejected") {
    CHECK_THROWS_AS(synth_session(spec, 2), ArgumentError);
    CHECK_THROWS_AS(synth_session(spec, -1), ArgumentError);
  }
}

TEST_CASE("synth_session with pure-conversation mix aggregates to conversation everywhere") {
  SynthSpec spec;
  spec.n_groups = 1;
  spec.session_len_s = 90.0;
  spec.class_mix = {1.0, 0.0, 0.0};
  spec.seed = 5;
  auto s = synth_session(spec, 0);
  auto labels = aggregate_labels(s.annotations, 30.0, spec.session_len_s);
  REQUIRE(labels.size() == 3);
  for (const auto& [start, label] : labels) CHECK(label == ClassLabel::conversation);
}

TEST_CASE("synth_dataset assigns lab to the first half of groups") {
  SynthSpec spec;
  spec.n_groups = 5;
  spec.session_len_s = 30.0;
  spec.seed = 9;
  auto sessions = synth_dataset(spec);
  REQUIRE(sessions.size() == 5);
  std::set<std::string> ids;
  for (const auto& s : sessions) ids.insert(s.group_id);
  CHECK(ids.size() == 5);
  CHECK(sessions[0].setting == Setting::lab);
  CHECK(sessions[2].setting == Setting::lab);
  CHECK(sessions[3].setting == Setting::semi_naturalistic);
  CHECK(sessions[4].setting == Setting::semi_naturalistic);
}

TEST_CASE("SynthSpec validation rejects bad mixes and sizes") {
  SynthSpec spec;
  spec.class_mix = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = SynthSpec{};
  spec.n_groups = 0;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
  spec = SynthSpec{};
  spec.session_len_s = -1;
  CHECK_THROWS_AS(spec.validate(), ValidationError);
}

TEST_CASE("export_session and ingest_session round-trip bit-identically") {
  SynthSpec spec;
  spec.n_groups = 1;
  spec.session_len_s = 20.0;
  spec.seed = 21;
  auto original = synth_session(spec, 0);

  auto dir_a = fresh_temp_dir("roundtrip_a");
  auto dir_b = fresh_temp_dir("roundtrip_b");
  export_session(original, dir_a.string());

  auto loaded = ingest_session(dir_a.string());
  CHECK(loaded.group_id == original.group_id);
  CHECK(loaded.setting == original.setting);
  CHECK(loaded.audio.size() == original.audio.size());
  CHECK(loaded.imu.cols() == original.imu.cols());
  REQUIRE(loaded.annotations.size() == original.annotations.size());
  for (size_t i = 0; i < loaded.annotations.size(); ++i) {
    CHECK(loaded.annotations[i].label == original.annotations[i].label);
    CHECK(loaded.annotations[i].context == original.annotations[i].context);
  }
  // Audio goes through 16-bit quantization once; a second trip is exact.
  export_session(loaded, dir_b.string());
  for (const char* name : {"audio.wav", "imu.csv", "labels.csv", "meta.json"})
    CHECK(slurp(dir_a / name) == slurp(dir_b / name));

  SUBCASE("missing file is reported") {
    std::filesystem::remove(dir_a / "imu.csv");
    CHECK_THROWS_AS(ingest_session(dir_a.string()), IoError);
  }
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("segment_session slices synchronized windows with labels") {
  SynthSpec spec;
  spec.n_groups = 1;
  spec.session_len_s = 70.0;
  spec.seed = 31;
  auto s = synth_session(spec, 0);
  auto segments = segment_session(s, 30.0);
  REQUIRE(segments.size() == 2);  // the trailing 10 s is dropped
  auto labels = aggregate_labels(s.annotations, 30.0, spec.session_len_s);
  for (size_t i = 0; i < segments.size(); ++i) {
    CHECK(segments[i].audio_slice.size() == 30 * 16000);
    CHECK(segments[i].imu_slice.rows() == 6);
    CHECK(segments[i].imu_slice.cols() == 30 * 55);
    CHECK(segments[i].label == labels[i].second);
    CHECK(segments[i].start_s == doctest::Approx(30.0 * i));
    CHECK(segments[i].session_ref == s.group_id);
  }
}
