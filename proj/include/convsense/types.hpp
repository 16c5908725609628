#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace convsense {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

// Thrown when input data violates a documented invariant.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a call argument is outside its contract.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Class codes are stable: they index confusion-matrix rows/columns.
enum class ClassLabel : int {
  conversation = 0,
  other_speech = 1,
  background_noise = 2,
};

inline constexpr int kNumClasses = 3;

const char* to_string(ClassLabel label);
ClassLabel class_label_from_string(const std::string& s);

enum class Setting { lab, semi_naturalistic };

const char* to_string(Setting s);
Setting setting_from_string(const std::string& s);

struct AnnotationSpan {
  double start_s = 0.0;
  double end_s = 0.0;
  ClassLabel label = ClassLabel::background_noise;
  std::string context;  // optional activity tag, may be empty

  AnnotationSpan() = default;
  AnnotationSpan(double start, double end, ClassLabel lab, std::string ctx = {})
      : start_s(start), end_s(end), label(lab), context(std::move(ctx)) {
    if (!(end_s > start_s)) throw ValidationError("AnnotationSpan: end_s must exceed start_s");
  }
};

// One recording group: synchronized audio + IMU + annotation track.
struct Session {
  std::string group_id;
  Setting setting = Setting::lab;

  VectorXd audio;           // mono samples
  double audio_rate_hz = 16000.0;

  MatrixXd imu;             // 6 x N: accel x/y/z, gyro x/y/z
  double imu_rate_hz = 55.0;

  std::vector<AnnotationSpan> annotations;  // non-overlapping, sorted by start

  std::string watch_hand;   // optional metadata
  std::string handedness;
  std::string gender;

  double audio_duration_s() const { return audio.size() / audio_rate_hz; }
  double imu_duration_s() const { return imu.cols() / imu_rate_hz; }

  // Checks the documented invariants; throws ValidationError on violation.
  void validate() const;
};

// A fixed-length window of one session with its majority label.
struct LabeledSegment {
  std::string session_ref;
  double start_s = 0.0;
  double window_len_s = 30.0;
  VectorXd audio_slice;
  MatrixXd imu_slice;     // 6 x (window_len_s * imu_rate)
  ClassLabel label = ClassLabel::background_noise;
  std::string context;    // dominant annotation context within the window
};

struct SynthSpec {
  int n_groups = 6;
  double session_len_s = 600.0;
  std::array<double, 3> class_mix{0.4, 0.3, 0.3};
  double audio_snr_db = 6.0;
  double gesture_rate_hz = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

}  // namespace convsense
