#include "convsense/types.hpp"

#include <cmath>

namespace convsense {

const char* to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::conversation: return "conversation";
    case ClassLabel::other_speech: return "other_speech";
    case ClassLabel::background_noise: return "background_noise";
  }
  throw ArgumentError("unknown ClassLabel");
}

ClassLabel class_label_from_string(const std::string& s) {
  if (s == "conversation") return ClassLabel::conversation;
  if (s == "other_speech") return ClassLabel::other_speech;
  if (s == "background_noise") return ClassLabel::background_noise;
  throw ValidationError("unknown class label: '" + s + "'");
}

const char* to_string(Setting s) {
  return s == Setting::lab ? "lab" : "semi_naturalistic";
}

Setting setting_from_string(const std::string& s) {
  if (s == "lab") return Setting::lab;
  if (s == "semi_naturalistic") return Setting::semi_naturalistic;
  throw ValidationError("unknown setting: '" + s + "'");
}

void Session::validate() const {
  if (imu.rows() != 6)
    throw ValidationError("session '" + group_id + "': IMU must have exactly 6 channels, got " +
                          std::to_string(imu.rows()));
  if (audio_rate_hz <= 0 || imu_rate_hz <= 0)
    throw ValidationError("session '" + group_id + "': non-positive sample rate");
  if (std::abs(audio_duration_s() - imu_duration_s()) > 1.0)
    throw ValidationError("session '" + group_id + "': audio and IMU durations differ by more than 1 s");
  double prev_end = -1.0;
  for (const auto& span : annotations) {
    if (!(span.end_s > span.start_s))
      throw ValidationError("session '" + group_id + "': annotation span with end <= start");
    if (span.start_s < prev_end)
      throw ValidationError("session '" + group_id + "': overlapping or unsorted annotation spans");
    prev_end = span.end_s;
  }
}

void SynthSpec::validate() const {
  if (n_groups <= 0) throw ValidationError("SynthSpec: n_groups must be positive");
  if (session_len_s <= 0) throw ValidationError("SynthSpec: session_len_s must be positive");
  double sum = class_mix[0] + class_mix[1] + class_mix[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("SynthSpec: class_mix must sum to 1");
  for (double p : class_mix)
    if (p < 0) throw ValidationError("SynthSpec: class_mix proportions must be nonnegative");
  if (gesture_rate_hz < 0) throw ValidationError("SynthSpec: gesture_rate_hz must be nonnegative");
}

}  // namespace convsense
