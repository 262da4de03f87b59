#pragma once

// Log-mel spectrogram and multi-scale distance by direct DFT over an
// explicitly reflect-padded copy of the signal.

#include <cmath>
#include <numbers>
#include <vector>

#include "tmimi/metrics.hpp"

namespace tmimi::testing {

inline std::vector<std::vector<double>> naive_log_mel(const std::vector<float>& x, std::size_t n_fft,
                                                      std::size_t n_mels, double sr, double floor = 1e-5) {
  const std::size_t pad = n_fft / 2, hop = n_fft / 4, bins = n_fft / 2 + 1;
  std::vector<double> padded;
  for (std::size_t i = pad; i >= 1; --i) padded.push_back(x[i]);
  padded.insert(padded.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < pad; ++i) padded.push_back(x[x.size() - 2 - i]);
  std::vector<double> cos_t(n_fft), sin_t(n_fft), window(n_fft);
  for (std::size_t n = 0; n < n_fft; ++n) {
    const double ang = 2 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(n_fft);
    cos_t[n] = std::cos(ang);
    sin_t[n] = std::sin(ang);
    window[n] = 0.5 - 0.5 * cos_t[n];
  }
  const auto fb = mel_filterbank(n_fft, n_mels, sr);
  std::vector<std::vector<double>> out;
  std::vector<double> frame(n_fft), mag(bins);
  for (std::size_t start = 0; start + n_fft <= padded.size(); start += hop) {
    for (std::size_t n = 0; n < n_fft; ++n) frame[n] = window[n] * padded[start + n];
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0, im = 0;
      for (std::size_t n = 0; n < n_fft; ++n) {
        const std::size_t idx = (k * n) % n_fft;
        re += frame[n] * cos_t[idx];
        im -= frame[n] * sin_t[idx];
      }
      mag[k] = std::sqrt(re * re + im * im);
    }
    std::vector<double> row(n_mels);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m][k] * mag[k];
      row[m] = std::log(std::max(e, floor));
    }
    out.push_back(row);
  }
  return out;
}

inline double naive_mel_l1(const std::vector<float>& a, const std::vector<float>& b, const MelConfig& cfg = {}) {
  double total = 0;
  for (std::size_t s = 0; s < cfg.fft_sizes.size(); ++s) {
    const auto ma = naive_log_mel(a, cfg.fft_sizes[s], cfg.n_mels[s], cfg.sample_rate, cfg.log_floor);
    const auto mb = naive_log_mel(b, cfg.fft_sizes[s], cfg.n_mels[s], cfg.sample_rate, cfg.log_floor);
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < ma.size(); ++j)
      for (std::size_t m = 0; m < ma[j].size(); ++m, ++n) sum += std::fabs(ma[j][m] - mb[j][m]);
    total += sum / static_cast<double>(n);
  }
  return total / static_cast<double>(cfg.fft_sizes.size());
}

}  // namespace tmimi::testing
