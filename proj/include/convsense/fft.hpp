#pragma once

#include "convsense/types.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace convsense {

// Forward DFT of a real signal, full complex spectrum of length n.
// The input is zero-padded (or truncated) to n.
inline std::vector<std::complex<double>> fft_real(const VectorXd& x, int n) {
  std::vector<double> time(static_cast<size_t>(n), 0.0);
  const int m = static_cast<int>(std::min<Eigen::Index>(x.size(), n));
  for (int i = 0; i < m; ++i) time[i] = x[i];
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, time);
  return freq;
}

// Inverse DFT returning the real part, normalized by 1/n.
inline VectorXd ifft_real(std::vector<std::complex<double>>& spectrum) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> time;
  fft.inv(time, spectrum);
  VectorXd out(static_cast<Eigen::Index>(time.size()));
  for (size_t i = 0; i < time.size(); ++i) out[static_cast<Eigen::Index>(i)] = time[i].real();
  return out;
}

}  // namespace convsense
