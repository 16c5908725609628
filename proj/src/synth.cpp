#include "convsense/synth.hpp"

#include "convsense/seed.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace convsense {

namespace {

constexpr double kTau = 6.283185307179586476925287;
constexpr double kAudioRate = 16000.0;
constexpr double kImuRate = 55.0;
constexpr double kSpeechAmp = 0.22;

struct SpanPlan {
  double start_s, end_s;
  ClassLabel label;
  std::string context;
};

// Harmonic burst with a syllabic AM envelope and 20 ms edge ramps.
void add_voiced_burst(VectorXd& audio, double t0, double t1, double f0, double amp,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double am_freq = 3.0 + 2.0 * unit(rng);
  const double am_phase = kTau * unit(rng);
  double phase[8];
  for (int k = 0; k < 8; ++k) phase[k] = kTau * unit(rng);

  const auto i0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::lround(t0 * kAudioRate)));
  const auto i1 = std::min<Eigen::Index>(audio.size(), static_cast<Eigen::Index>(std::lround(t1 * kAudioRate)));
  const double ramp_s = 0.02;
  for (Eigen::Index i = i0; i < i1; ++i) {
    const double t = static_cast<double>(i) / kAudioRate;
    double env = 0.55 + 0.45 * std::sin(kTau * am_freq * t + am_phase);
    env *= std::min(1.0, (t - t0) / ramp_s) * std::min(1.0, (t1 - t) / ramp_s);
    double v = 0.0;
    for (int k = 1; k <= 8; ++k) v += std::sin(kTau * k * f0 * t + phase[k - 1]) / k;
    audio[i] += amp * env * v;
  }
}

// Music-like chord: stable fundamentals with a slow tremolo.
void add_music(VectorXd& audio, double t0, double t1, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double chord[3] = {220.0, 277.2, 329.6};
  const double trem_freq = 1.5 + 1.5 * unit(rng);
  const double trem_phase = kTau * unit(rng);
  double phase[12];
  for (int k = 0; k < 12; ++k) phase[k] = kTau * unit(rng);

  const auto i0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::lround(t0 * kAudioRate)));
  const auto i1 = std::min<Eigen::Index>(audio.size(), static_cast<Eigen::Index>(std::lround(t1 * kAudioRate)));
  for (Eigen::Index i = i0; i < i1; ++i) {
    const double t = static_cast<double>(i) / kAudioRate;
    const double env = 0.5 + 0.5 * std::sin(kTau * trem_freq * t + trem_phase);
    double v = 0.0;
    int p = 0;
    for (double f : chord)
      for (int k = 1; k <= 4; ++k) v += std::sin(kTau * k * f * t + phase[p++]) / k;
    audio[i] += 0.18 * env * v / 3.0;
  }
}

// Band-limited oscillation packet with a Hann envelope.
void add_gesture(MatrixXd& imu, double center_s, double dur_s, double freq_hz, double amp,
                 const int* channels, const double* gains, int n_channels, double phase) {
  const double t0 = center_s - dur_s / 2.0;
  const auto i0 = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::lround(t0 * kImuRate)));
  const auto i1 = std::min<Eigen::Index>(imu.cols(),
                                         static_cast<Eigen::Index>(std::lround((t0 + dur_s) * kImuRate)));
  for (Eigen::Index i = i0; i < i1; ++i) {
    const double t = static_cast<double>(i) / kImuRate;
    const double u = (t - t0) / dur_s;
    const double env = 0.5 * (1.0 - std::cos(kTau * std::clamp(u, 0.0, 1.0)));
    const double v = amp * env * std::sin(kTau * freq_hz * (t - t0) + phase);
    for (int c = 0; c < n_channels; ++c) imu(channels[c], i) += gains[c] * v;
  }
}

int poisson_count(std::mt19937_64& rng, double lambda) {
  if (lambda <= 0) return 0;
  std::poisson_distribution<int> dist(lambda);
  return dist(rng);
}

}  // namespace

Session synth_session(const SynthSpec& spec, int group_index) {
  spec.validate();
  if (group_index < 0 || group_index >= spec.n_groups)
    throw ArgumentError("synth_session: group_index out of range");

  auto rng = make_rng(spec.seed, "dataset/group" + std::to_string(group_index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n_lab = (spec.n_groups + 1) / 2;
  const bool is_lab = group_index < n_lab;
  const double snr_db = is_lab ? spec.audio_snr_db : spec.audio_snr_db - 6.0;

  Session s;
  s.group_id = "g" + std::string(group_index < 10 ? "0" : "") + std::to_string(group_index);
  s.setting = is_lab ? Setting::lab : Setting::semi_naturalistic;
  s.audio_rate_hz = kAudioRate;
  s.imu_rate_hz = kImuRate;
  s.audio = VectorXd::Zero(static_cast<Eigen::Index>(std::lround(spec.session_len_s * kAudioRate)));
  s.imu = MatrixXd::Zero(6, static_cast<Eigen::Index>(std::lround(spec.session_len_s * kImuRate)));
  s.watch_hand = unit(rng) < 0.8 ? "left" : "right";
  s.handedness = unit(rng) < 0.85 ? "right" : "left";
  s.gender = unit(rng) < 0.5 ? "male" : "female";

  // Per-group speaker fundamentals. The wearer (A) and partner (B) occupy
  // separate ranges; the other-speech voice overlaps both so class identity
  // cannot be read off pitch alone.
  const double f_wearer = 100.0 + 40.0 * unit(rng);
  const double f_partner = 170.0 + 60.0 * unit(rng);
  const double f_other = 100.0 + 130.0 * unit(rng);

  // Class timeline.
  std::vector<SpanPlan> plan;
  double t = 0.0;
  while (t < spec.session_len_s - 1e-9) {
    double len = 25.0 + 30.0 * unit(rng);
    len = std::min(len, spec.session_len_s - t);
    const double r = unit(rng);
    ClassLabel label;
    if (r < spec.class_mix[0])
      label = ClassLabel::conversation;
    else if (r < spec.class_mix[0] + spec.class_mix[1])
      label = ClassLabel::other_speech;
    else
      label = ClassLabel::background_noise;
    SpanPlan sp{t, t + len, label, ""};
    switch (label) {
      case ClassLabel::conversation:
        sp.context = unit(rng) < 0.5 ? "regular_conversation" : "conversation_eating";
        break;
      case ClassLabel::other_speech:
        sp.context = "reading_aloud";
        break;
      case ClassLabel::background_noise:
        sp.context = unit(rng) < 0.5 ? "music_background" : "watching_video";
        break;
    }
    plan.push_back(sp);
    t += len;
  }

  const int gest_ch[3] = {0, 1, 5};
  const double gest_gain[3] = {1.0, 0.7, 0.5};
  const int eat_ch[2] = {2, 4};
  const double eat_gain[2] = {0.8, 0.6};

  for (const auto& sp : plan) {
    const double span_len = sp.end_s - sp.start_s;
    switch (sp.label) {
      case ClassLabel::conversation: {
        // Alternating turns; gestures ride on the wearer's turns.
        bool wearer_turn = unit(rng) < 0.5;
        double tt = sp.start_s;
        while (tt < sp.end_s - 0.3) {
          const double turn_len = std::min(1.0 + 3.0 * unit(rng), sp.end_s - tt);
          const double f0 = wearer_turn ? f_wearer : f_partner;
          add_voiced_burst(s.audio, tt, tt + turn_len, f0, kSpeechAmp, rng);
          if (wearer_turn) {
            const int n_gestures = poisson_count(rng, turn_len * spec.gesture_rate_hz);
            for (int g = 0; g < n_gestures; ++g) {
              const double center = tt + turn_len * unit(rng);
              add_gesture(s.imu, center, 0.5 + 1.0 * unit(rng), 1.0 + 3.0 * unit(rng),
                          0.3 + 0.4 * unit(rng), gest_ch, gest_gain, 3, kTau * unit(rng));
            }
          }
          tt += turn_len + 0.15 + 0.25 * unit(rng);
          wearer_turn = !wearer_turn;
        }
        if (sp.context == "conversation_eating") {
          const int n_eat = poisson_count(rng, span_len * 0.3);
          for (int g = 0; g < n_eat; ++g)
            add_gesture(s.imu, sp.start_s + span_len * unit(rng), 1.0 + 1.0 * unit(rng),
                        0.5 + 1.0 * unit(rng), 0.2 + 0.3 * unit(rng), eat_ch, eat_gain, 2,
                        kTau * unit(rng));
        }
        break;
      }
      case ClassLabel::other_speech: {
        // One voice, long bursts, no turn alternation.
        double tt = sp.start_s;
        while (tt < sp.end_s - 0.3) {
          const double burst_len = std::min(3.0 + 5.0 * unit(rng), sp.end_s - tt);
          add_voiced_burst(s.audio, tt, tt + burst_len, f_other, kSpeechAmp, rng);
          tt += burst_len + 0.2 + 0.4 * unit(rng);
        }
        const int n_gestures = poisson_count(rng, span_len * 0.15 * spec.gesture_rate_hz);
        for (int g = 0; g < n_gestures; ++g)
          add_gesture(s.imu, sp.start_s + span_len * unit(rng), 0.5 + 1.0 * unit(rng),
                      1.0 + 3.0 * unit(rng), 0.3 + 0.4 * unit(rng), gest_ch, gest_gain, 3,
                      kTau * unit(rng));
        break;
      }
      case ClassLabel::background_noise: {
        // Broadband floor is part of the class content; IMU stays static.
        std::normal_distribution<double> floor_noise(0.0, 0.05);
        const auto i0 = static_cast<Eigen::Index>(std::lround(sp.start_s * kAudioRate));
        const auto i1 = std::min<Eigen::Index>(s.audio.size(),
                                               static_cast<Eigen::Index>(std::lround(sp.end_s * kAudioRate)));
        for (Eigen::Index i = i0; i < i1; ++i) s.audio[i] += floor_noise(rng);
        if (sp.context == "music_background") {
          add_music(s.audio, sp.start_s, sp.end_s, rng);
        } else {
          // Faint distant narration.
          double tt = sp.start_s;
          while (tt < sp.end_s - 0.3) {
            const double burst_len = std::min(1.0 + 2.0 * unit(rng), sp.end_s - tt);
            add_voiced_burst(s.audio, tt, tt + burst_len, 100.0 + 130.0 * unit(rng),
                             kSpeechAmp * 0.12, rng);
            tt += burst_len + 0.3 + 0.7 * unit(rng);
          }
        }
        break;
      }
    }
  }

  // White noise at the requested SNR against the clean mixture.
  const double signal_rms = std::sqrt(s.audio.squaredNorm() / std::max<Eigen::Index>(1, s.audio.size()));
  if (signal_rms > 0) {
    const double noise_std = signal_rms / std::pow(10.0, snr_db / 20.0);
    std::normal_distribution<double> noise(0.0, noise_std);
    for (Eigen::Index i = 0; i < s.audio.size(); ++i) s.audio[i] += noise(rng);
  }

  // IMU baseline: gravity-like offset on az plus sensor noise.
  std::normal_distribution<double> imu_noise(0.0, 0.05);
  for (Eigen::Index i = 0; i < s.imu.cols(); ++i) {
    s.imu(2, i) += 1.0;
    for (int c = 0; c < 6; ++c) s.imu(c, i) += imu_noise(rng);
  }

  for (const auto& sp : plan) s.annotations.emplace_back(sp.start_s, sp.end_s, sp.label, sp.context);

  s.validate();
  return s;
}

std::vector<Session> synth_dataset(const SynthSpec& spec) {
  spec.validate();
  std::vector<Session> sessions;
  sessions.reserve(spec.n_groups);
  for (int g = 0; g < spec.n_groups; ++g) sessions.push_back(synth_session(spec, g));
  return sessions;
}

}  // namespace convsense
