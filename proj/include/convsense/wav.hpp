#pragma once

#include "convsense/types.hpp"

#include <string>

namespace convsense {

// Mono 16-bit PCM WAV. Samples are mapped to [-1, 1) via s / 32768.
void write_wav(const std::string& path, const VectorXd& samples, int sample_rate_hz);

struct WavData {
  VectorXd samples;
  int sample_rate_hz = 0;
};

WavData read_wav(const std::string& path);

}  // namespace convsense
