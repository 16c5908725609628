#pragma once

#include "convsense/types.hpp"

#include <string>
#include <vector>

namespace convsense::dsp {

inline constexpr int kSpectrogramBands = 128;
inline constexpr double kSpectrogramWindowS = 0.5;   // 500 ms analysis window
inline constexpr double kSpectrogramStrideS = 0.25;  // 250 ms hop
inline constexpr int kEnergyStepSamples = 22;        // 400 ms at 55 Hz
inline constexpr int kEnergyTransformLen = 62;       // zero-padded DFT length
inline constexpr int kEnergyBins = 32;               // one-sided bins of a 62-point DFT

// Low-passes the signal to the target Nyquist in the frequency domain and
// reconstructs at the original length, fusing decimation and interpolation:
// the output has exactly input.size() samples with content above
// target_rate_hz/2 removed. Throws ArgumentError when target_rate_hz is not
// in (0, source_rate_hz).
VectorXd resample_bandlimited(const VectorXd& audio, double source_rate_hz,
                              double target_rate_hz);

struct AudioSpectrogram {
  MatrixXd values;  // kSpectrogramBands x (window_len_s / 0.25), standardized
  double source_rate_hz = 0.0;
};

// Unnormalized band magnitudes: one-sided magnitude spectrum of each 500 ms
// window (zero-padded at the segment end so the frame count is exactly
// window_len_s / 0.25), mean-pooled into 128 equal-width linear bands.
MatrixXd audio_band_magnitudes(const VectorXd& slice, double rate_hz, double window_len_s);

// audio_band_magnitudes followed by per-segment standardization
// (subtract mean, divide by std; all-equal input maps to zeros).
AudioSpectrogram audio_spectrogram(const VectorXd& slice, double rate_hz, double window_len_s);

// Per-channel standardization to mean 0, std 1 (population std). Channels
// with vanishing variance map to zeros instead of NaN.
MatrixXd standardize_imu(const MatrixXd& imu);

// Splits a 6x(rate*W) slice into frames of frame_s seconds hopped by
// frame_s/2, zero-padding the tail, so the frame count is exactly
// ceil(W / (frame_s/2)). Defaults give 2 s frames with 1 s overlap: a 30 s
// slice at 55 Hz yields 30 frames of shape (6,110).
std::vector<MatrixXd> frame_imu(const MatrixXd& imu_slice, double rate_hz = 55.0,
                                double frame_s = 2.0);

// Short-time energy image of one IMU frame: per channel, consecutive
// non-overlapping 22-sample (400 ms) windows, Hann-weighted, zero-padded to
// a 62-point transform; entry (c,t) is the magnitude squared of the 32
// one-sided bins summed over frequency. A (6,110) frame yields (6,5).
MatrixXd imu_energy(const MatrixXd& frame);

// Knobs exposed to the sensitivity sweeps.
struct PreprocessConfig {
  double audio_target_rate_hz = 0.0;  // 0 keeps the source bandwidth
  double window_len_s = 30.0;
  double imu_frame_s = 2.0;
};

// One segment's model-ready tensors.
struct SegmentFeatures {
  MatrixXd spectrogram;               // 128 x (window_len_s/0.25)
  std::vector<MatrixXd> imu_energy;   // one energy image per IMU frame
  ClassLabel label = ClassLabel::background_noise;
  std::string context;
  std::string session_ref;
};

// Full preprocessing chain for one labeled segment: optional bandwidth
// reduction, spectrogram, and per-frame IMU energy images (IMU slice is
// standardized per segment first).
SegmentFeatures preprocess_segment(const LabeledSegment& segment, const PreprocessConfig& config);

}  // namespace convsense::dsp
