#pragma once

// Dense float32 kernels shared by the decoder, the baseline head and the tests.
//
// Every reduction accumulates in float32 in a fixed order: element (i, j) of a
// product is 0 + a[i][0]*b[0][j] + a[i][1]*b[1][j] + ... in ascending k. The
// loops below are arranged so the compiler can vectorize across j without
// changing that order, which keeps results bit-identical to a naive triple loop
// (the build disables FMA contraction).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tmimi/error.hpp"

namespace tmimi {

class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      fail(ErrorKind::Shape, "tensor data length " + std::to_string(data_.size()) + " != " +
                                 std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  static Tensor2D from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<float> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorKind::Shape, "ragged initializer");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor2D(r, c, std::move(data));
  }

  static Tensor2D identity(std::size_t n) {
    Tensor2D t(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
    return t;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  Tensor2D transposed() const {
    Tensor2D t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor2D&, const Tensor2D&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Visibility mask for softmax_rows: true means the position takes part.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> visible;

  Mask(std::size_t r, std::size_t c, bool value = true) : rows(r), cols(c), visible(r * c, value ? 1 : 0) {}
  bool operator()(std::size_t r, std::size_t c) const { return visible[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { visible[r * cols + c] = v ? 1 : 0; }
};

// SplitMix64 (Steele, Lea, Flood 2014):
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)
// uniform() uses the top 24 bits: (next() >> 40) * 2^-24, exact in float32.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  float uniform() noexcept { return static_cast<float>(next() >> 40) * 0x1.0p-24f; }

  // [-bound, bound)
  float uniform_symmetric(float bound) noexcept { return bound * (2.0f * uniform() - 1.0f); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next() % n; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

inline Tensor2D random_tensor(std::size_t rows, std::size_t cols, Rng& rng, float bound = 1.0f) {
  Tensor2D t(rows, cols);
  for (float& v : t.data()) v = rng.uniform_symmetric(bound);
  return t;
}

// Multiply-accumulate instrumentation. While a MacCounter is alive on a thread,
// every kernel adds the number of multiply-accumulates it executes.
namespace detail {
inline thread_local std::uint64_t* mac_sink = nullptr;
}

inline void count_macs(std::uint64_t n) noexcept {
  if (detail::mac_sink != nullptr) *detail::mac_sink += n;
}

class MacCounter {
 public:
  MacCounter() : previous_(detail::mac_sink) { detail::mac_sink = &count_; }
  ~MacCounter() { detail::mac_sink = previous_; }
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const noexcept { return count_; }
  void reset() noexcept { count_ = 0; }

 private:
  std::uint64_t count_ = 0;
  std::uint64_t* previous_;
};

// out[rows x n] = a[rows x k] * b[k x n], all row-major. out must not alias.
inline void matmul_into(std::span<const float> a, std::span<const float> b, std::span<float> out,
                        std::size_t rows, std::size_t inner, std::size_t n) {
  for (std::size_t i = 0; i < rows; ++i) {
    float* c = out.data() + i * n;
    std::fill(c, c + n, 0.0f);
    const float* ai = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const float s = ai[k];
      const float* bk = b.data() + k * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += s * bk[j];
    }
  }
  count_macs(static_cast<std::uint64_t>(rows) * inner * n);
}

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::Shape, "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " by " +
                               std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  Tensor2D out(a.rows(), b.cols());
  matmul_into(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
  return out;
}

inline constexpr float kLayerNormEps = 1e-5f;

inline void layer_norm_row(std::span<const float> x, std::span<const float> gamma, std::span<const float> beta,
                           std::span<float> out, float eps = kLayerNormEps) {
  const std::size_t n = x.size();
  float mean = 0.0f;
  for (float v : x) mean += v;
  mean /= static_cast<float>(n);
  float var = 0.0f;
  for (float v : x) var += (v - mean) * (v - mean);
  var /= static_cast<float>(n);
  const float inv = 1.0f / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv * gamma[i] + beta[i];
}

inline Tensor2D layer_norm(const Tensor2D& x, std::span<const float> gamma, std::span<const float> beta,
                           float eps = kLayerNormEps) {
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    fail(ErrorKind::Shape, "layer_norm parameters of length " + std::to_string(gamma.size()) + "/" +
                               std::to_string(beta.size()) + " for width " + std::to_string(x.cols()));
  }
  if (!(eps > 0.0f)) fail(ErrorKind::InvalidArgument, "layer_norm eps must be positive");
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) layer_norm_row(x.row(r), gamma, beta, out.row(r), eps);
  return out;
}

// Row-wise softmax with max subtraction. Invisible entries come out exactly 0;
// a row with no visible entry is an error.
inline Tensor2D softmax_rows(const Tensor2D& x, const std::optional<Mask>& mask = std::nullopt) {
  if (mask && (mask->rows != x.rows() || mask->cols != x.cols())) fail(ErrorKind::Shape, "softmax mask shape");
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto visible = [&](std::size_t c) { return !mask || (*mask)(r, c); };
    float mx = -std::numeric_limits<float>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!visible(c)) continue;
      any = true;
      mx = std::max(mx, x(r, c));
    }
    if (!any) fail(ErrorKind::InvalidArgument, "softmax row " + std::to_string(r) + " is fully masked");
    float sum = 0.0f;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (!visible(c)) continue;
      const float e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    const float inv = 1.0f / sum;
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) *= inv;
  }
  return out;
}

// GELU, tanh approximation:
//   gelu(x) = 0.5 * x * (1 + tanh(0.7978845608 * (x + 0.044715 * x^3)))
// with 0.7978845608 = sqrt(2/pi) rounded to float32.
inline float gelu_scalar(float x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  constexpr float kCubic = 0.044715f;
  return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x)));
}

inline void gelu_inplace(std::span<float> x) {
  for (float& v : x) v = gelu_scalar(v);
}

inline Tensor2D gelu(const Tensor2D& x) {
  Tensor2D out = x;
  gelu_inplace(out.data());
  return out;
}

inline float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) fail(ErrorKind::Shape, "max_abs_diff length mismatch");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace tmimi
