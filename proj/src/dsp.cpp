#include "convsense/dsp.hpp"

#include "convsense/fft.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace convsense::dsp {

namespace {

Eigen::Index checked_slice_samples(Eigen::Index actual, double rate_hz, double window_len_s,
                                   const char* what) {
  const auto expected = static_cast<Eigen::Index>(std::llround(window_len_s * rate_hz));
  if (std::abs(actual - expected) > 1)
    throw ArgumentError(std::string(what) + ": slice length does not match window length");
  return expected;
}

}  // namespace

VectorXd resample_bandlimited(const VectorXd& audio, double source_rate_hz,
                              double target_rate_hz) {
  if (!(target_rate_hz > 0.0) || target_rate_hz >= source_rate_hz)
    throw ArgumentError("resample_bandlimited: target rate must be in (0, source rate)");
  if (audio.size() == 0) return audio;

  const auto n = audio.size();
  auto spectrum = fft_real(audio, static_cast<int>(n));
  const double cutoff_hz = target_rate_hz / 2.0;
  for (Eigen::Index k = 1; k <= n / 2; ++k) {
    const double freq = static_cast<double>(k) * source_rate_hz / static_cast<double>(n);
    if (freq >= cutoff_hz) {
      spectrum[k] = 0.0;
      spectrum[n - k] = 0.0;  // conjugate-symmetric partner (k == n-k at Nyquist)
    }
  }
  return ifft_real(spectrum);
}

MatrixXd audio_band_magnitudes(const VectorXd& slice, double rate_hz, double window_len_s) {
  if (!(window_len_s > 0)) throw ArgumentError("audio_band_magnitudes: window_len_s must be positive");
  const auto n = checked_slice_samples(slice.size(), rate_hz, window_len_s, "audio_band_magnitudes");
  const auto window = static_cast<Eigen::Index>(std::llround(kSpectrogramWindowS * rate_hz));
  const auto stride = static_cast<Eigen::Index>(std::llround(kSpectrogramStrideS * rate_hz));
  const auto n_frames = static_cast<Eigen::Index>(std::llround(window_len_s / kSpectrogramStrideS));
  const Eigen::Index n_bins = window / 2 + 1;  // one-sided

  MatrixXd out(kSpectrogramBands, n_frames);
  VectorXd padded(window);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const Eigen::Index start = t * stride;
    padded.setZero();
    const Eigen::Index have = std::clamp<Eigen::Index>(n - start, 0, window);
    if (have > 0) padded.head(have) = slice.segment(start, have);

    const auto spectrum = fft_real(padded, static_cast<int>(window));
    // Mean-pool one-sided magnitudes into equal-width linear bands.
    for (int b = 0; b < kSpectrogramBands; ++b) {
      const auto lo = static_cast<Eigen::Index>(static_cast<long long>(b) * n_bins / kSpectrogramBands);
      const auto hi = static_cast<Eigen::Index>(static_cast<long long>(b + 1) * n_bins / kSpectrogramBands);
      double acc = 0.0;
      for (Eigen::Index k = lo; k < hi; ++k) acc += std::abs(spectrum[k]);
      out(b, t) = acc / static_cast<double>(hi - lo);
    }
  }
  return out;
}

AudioSpectrogram audio_spectrogram(const VectorXd& slice, double rate_hz, double window_len_s) {
  AudioSpectrogram spec;
  spec.source_rate_hz = rate_hz;
  spec.values = audio_band_magnitudes(slice, rate_hz, window_len_s);
  const double mean = spec.values.mean();
  const double std_dev =
      std::sqrt((spec.values.array() - mean).square().sum() / static_cast<double>(spec.values.size()));
  if (std_dev < 1e-12)
    spec.values.setZero();
  else
    spec.values = (spec.values.array() - mean) / std_dev;
  return spec;
}

MatrixXd standardize_imu(const MatrixXd& imu) {
  if (imu.cols() < 2) throw ArgumentError("standardize_imu: need at least 2 samples");
  MatrixXd out(imu.rows(), imu.cols());
  for (Eigen::Index c = 0; c < imu.rows(); ++c) {
    const double mean = imu.row(c).mean();
    const double var = (imu.row(c).array() - mean).square().sum() / static_cast<double>(imu.cols());
    const double std_dev = std::sqrt(var);
    if (std_dev < 1e-12)
      out.row(c).setZero();
    else
      out.row(c) = (imu.row(c).array() - mean) / std_dev;
  }
  return out;
}

std::vector<MatrixXd> frame_imu(const MatrixXd& imu_slice, double rate_hz, double frame_s) {
  if (!(frame_s > 0)) throw ArgumentError("frame_imu: frame_s must be positive");
  const auto frame_len = static_cast<Eigen::Index>(std::llround(frame_s * rate_hz));
  if (imu_slice.cols() < frame_len)
    throw ArgumentError("frame_imu: slice shorter than one frame");

  const double window_len_s = static_cast<double>(imu_slice.cols()) / rate_hz;
  const double hop_s = frame_s / 2.0;
  const auto n_frames = static_cast<Eigen::Index>(std::ceil(window_len_s / hop_s - 1e-9));

  std::vector<MatrixXd> frames;
  frames.reserve(static_cast<size_t>(n_frames));
  for (Eigen::Index i = 0; i < n_frames; ++i) {
    const auto start = static_cast<Eigen::Index>(std::llround(static_cast<double>(i) * hop_s * rate_hz));
    MatrixXd frame = MatrixXd::Zero(imu_slice.rows(), frame_len);
    const Eigen::Index have = std::clamp<Eigen::Index>(imu_slice.cols() - start, 0, frame_len);
    if (have > 0) frame.leftCols(have) = imu_slice.middleCols(start, have);
    frames.push_back(std::move(frame));
  }
  return frames;
}

MatrixXd imu_energy(const MatrixXd& frame) {
  if (frame.rows() != 6 || frame.cols() < 1)
    throw ArgumentError("imu_energy: frame must be 6 x N with N >= 1");

  const auto n_steps = std::max<Eigen::Index>(1, frame.cols() / kEnergyStepSamples);
  MatrixXd energy(frame.rows(), n_steps);
  VectorXd padded(kEnergyTransformLen);
  for (Eigen::Index c = 0; c < frame.rows(); ++c) {
    for (Eigen::Index t = 0; t < n_steps; ++t) {
      const Eigen::Index start = t * kEnergyStepSamples;
      const Eigen::Index have =
          std::clamp<Eigen::Index>(frame.cols() - start, 0, kEnergyStepSamples);
      padded.setZero();
      for (Eigen::Index j = 0; j < have; ++j) {
        const double hann =
            0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(j) /
                                  static_cast<double>(kEnergyStepSamples - 1)));
        padded[j] = frame(c, start + j) * hann;
      }
      const auto spectrum = fft_real(padded, kEnergyTransformLen);
      double acc = 0.0;
      for (int k = 0; k < kEnergyBins; ++k) acc += std::norm(spectrum[k]);
      energy(c, t) = acc;
    }
  }
  return energy;
}

SegmentFeatures preprocess_segment(const LabeledSegment& segment, const PreprocessConfig& config) {
  SegmentFeatures features;
  features.label = segment.label;
  features.context = segment.context;
  features.session_ref = segment.session_ref;

  // Rates are implied by slice length; slices always span window_len_s.
  const double audio_rate = static_cast<double>(segment.audio_slice.size()) / config.window_len_s;
  const double imu_rate = static_cast<double>(segment.imu_slice.cols()) / config.window_len_s;
  VectorXd audio = segment.audio_slice;
  if (config.audio_target_rate_hz > 0 && config.audio_target_rate_hz < audio_rate)
    audio = resample_bandlimited(audio, audio_rate, config.audio_target_rate_hz);
  features.spectrogram = audio_spectrogram(audio, audio_rate, config.window_len_s).values;

  const MatrixXd imu = standardize_imu(segment.imu_slice);
  for (const auto& frame : frame_imu(imu, imu_rate, config.imu_frame_s))
    features.imu_energy.push_back(imu_energy(frame));
  return features;
}

}  // namespace convsense::dsp
