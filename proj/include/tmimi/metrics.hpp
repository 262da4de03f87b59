#pragma once

// Objective signal metrics: SI-SDR, multi-scale log-mel L1 distance and the
// RMS level inside regions that should be silent.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "tmimi/error.hpp"

namespace tmimi {

inline constexpr double kSiSdrCapDb = 100.0;

// Scale-invariant SDR in dB. The estimate is projected onto the reference,
// target = (<e, r> / <r, r>) r, and the score is 10 log10(|target|^2 /
// |e - target|^2), clamped to [-100, 100] dB (+100 for a zero residual).
inline double si_sdr(std::span<const float> reference, std::span<const float> estimate) {
  if (reference.size() != estimate.size() || reference.empty())
    fail(ErrorKind::Shape, "si_sdr needs equal, non-zero lengths");
  double rr = 0.0, er = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += static_cast<double>(reference[i]) * reference[i];
    er += static_cast<double>(estimate[i]) * reference[i];
  }
  if (rr == 0.0) fail(ErrorKind::InvalidArgument, "si_sdr reference is all zeros");
  const double alpha = er / rr;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * reference[i];
    const double e = static_cast<double>(estimate[i]) - t;
    target += t * t;
    residual += e * e;
  }
  if (residual == 0.0) return kSiSdrCapDb;
  if (target == 0.0) return -kSiSdrCapDb;
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCapDb, kSiSdrCapDb);
}

struct MelConfig {
  std::vector<std::size_t> fft_sizes{2048, 1024, 512, 256, 128, 64};
  std::vector<std::size_t> n_mels{80, 80, 64, 32, 16, 8};
  double sample_rate = 24000.0;
  double log_floor = 1e-5;

  static std::size_t hop(std::size_t fft) { return fft / 4; }

  std::size_t max_fft() const { return fft_sizes.empty() ? 0 : *std::max_element(fft_sizes.begin(), fft_sizes.end()); }

  void validate() const {
    if (fft_sizes.empty() || fft_sizes.size() != n_mels.size())
      fail(ErrorKind::InvalidArgument, "mel config needs equal-length, non-empty fft_sizes and n_mels");
    for (std::size_t i = 0; i < fft_sizes.size(); ++i) {
      const std::size_t n = fft_sizes[i];
      if (n < 4 || (n & (n - 1)) != 0) fail(ErrorKind::InvalidArgument, "fft sizes must be powers of two >= 4");
      if (n_mels[i] == 0) fail(ErrorKind::InvalidArgument, "n_mels must be positive");
    }
    if (!(sample_rate > 0.0) || !(log_floor > 0.0)) fail(ErrorKind::InvalidArgument, "bad sample rate or floor");
  }
};

// HTK mel scale: mel = 2595 log10(1 + hz / 700).
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters with n_mels + 2 edge points evenly spaced in mel between
// 0 Hz and Nyquist, evaluated at bin frequencies k * sr / n_fft, unnormalized.
// Returned as n_mels rows of n_fft / 2 + 1 weights.
inline std::vector<std::vector<double>> mel_filterbank(std::size_t n_fft, std::size_t n_mels, double sample_rate) {
  const std::size_t bins = n_fft / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  std::vector<std::vector<double>> fb(n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double w = std::min((f - lo) / (center - lo), (hi - f) / (hi - center));
      fb[m][k] = std::max(0.0, w);
    }
  }
  return fb;
}

namespace detail {

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

// Index into x reflected about both ends (no edge repeat), as numpy's "reflect".
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  while (i < 0 || i >= len) {
    if (i < 0) i = -i;
    if (i >= len) i = 2 * (len - 1) - i;
  }
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Log-mel spectrogram, frames x n_mels. Frames are centered: the signal is
// reflect-padded by n_fft / 2 on both sides and frame j starts at j * hop of the
// padded signal, giving 1 + len / hop frames. Each frame is multiplied by a
// periodic Hann window; the magnitude spectrum is projected onto the mel bank
// and mapped through ln(max(v, floor)).
inline std::vector<std::vector<double>> log_mel_spectrogram(std::span<const float> x, std::size_t n_fft,
                                                            std::size_t n_mels, double sample_rate, double floor) {
  if (x.size() <= n_fft / 2) fail(ErrorKind::InvalidArgument, "signal too short for reflect padding");
  const std::size_t hop = MelConfig::hop(n_fft);
  const std::size_t frames = 1 + x.size() / hop;
  const std::size_t bins = n_fft / 2 + 1;
  const auto fb = mel_filterbank(n_fft, n_mels, sample_rate);

  std::unique_ptr<double, detail::FftwFree> in(static_cast<double*>(fftw_malloc(sizeof(double) * n_fft)));
  std::unique_ptr<fftw_complex, detail::FftwFree> out(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * bins)));
  std::unique_ptr<fftw_plan_s, detail::FftwPlanDeleter> plan(
      fftw_plan_dft_r2c_1d(static_cast<int>(n_fft), in.get(), out.get(), FFTW_ESTIMATE));

  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n_fft));

  std::vector<std::vector<double>> result(frames, std::vector<double>(n_mels));
  std::vector<double> mag(bins);
  const auto pad = static_cast<std::ptrdiff_t>(n_fft / 2);
  for (std::size_t j = 0; j < frames; ++j) {
    for (std::size_t i = 0; i < n_fft; ++i) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(j * hop + i) - pad;
      in.get()[i] = window[i] * x[detail::reflect_index(src, x.size())];
    }
    fftw_execute(plan.get());
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::hypot(out.get()[k][0], out.get()[k][1]);
    for (std::size_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m][k] * mag[k];
      result[j][m] = std::log(std::max(e, floor));
    }
  }
  return result;
}

// Mean over scales of the mean absolute log-mel difference.
inline double multiscale_mel_l1(std::span<const float> a, std::span<const float> b, const MelConfig& cfg = {}) {
  cfg.validate();
  if (a.size() != b.size()) fail(ErrorKind::Shape, "multiscale_mel_l1 needs equal lengths");
  if (a.size() < cfg.max_fft())
    fail(ErrorKind::InvalidArgument, "signal of " + std::to_string(a.size()) + " samples is shorter than the largest FFT (" +
                                         std::to_string(cfg.max_fft()) + ")");
  double total = 0.0;
  for (std::size_t s = 0; s < cfg.fft_sizes.size(); ++s) {
    const auto ma = log_mel_spectrogram(a, cfg.fft_sizes[s], cfg.n_mels[s], cfg.sample_rate, cfg.log_floor);
    const auto mb = log_mel_spectrogram(b, cfg.fft_sizes[s], cfg.n_mels[s], cfg.sample_rate, cfg.log_floor);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t j = 0; j < ma.size(); ++j)
      for (std::size_t m = 0; m < ma[j].size(); ++m, ++count) sum += std::fabs(ma[j][m] - mb[j][m]);
    total += sum / static_cast<double>(count);
  }
  return total / static_cast<double>(cfg.fft_sizes.size());
}

// Half-open sample range [begin, end).
using SampleRange = std::pair<std::size_t, std::size_t>;

// RMS over the union of the regions; overlapping samples count once.
inline double silence_noise_rms(std::span<const float> x, std::span<const SampleRange> regions) {
  if (regions.empty()) fail(ErrorKind::InvalidArgument, "no silent regions given");
  std::vector<char> in_region(x.size(), 0);
  for (const auto& [begin, end] : regions) {
    if (begin > end || end > x.size()) fail(ErrorKind::InvalidArgument, "silent region outside the signal");
    std::fill(in_region.begin() + static_cast<std::ptrdiff_t>(begin), in_region.begin() + static_cast<std::ptrdiff_t>(end), 1);
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!in_region[i]) continue;
    sum += static_cast<double>(x[i]) * x[i];
    ++n;
  }
  if (n == 0) fail(ErrorKind::InvalidArgument, "silent regions are all empty");
  return std::sqrt(sum / static_cast<double>(n));
}

}  // namespace tmimi
