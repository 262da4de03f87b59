#pragma once

// Baseline upsampling head built from transposed 1-D convolutions, used to
// compare cost against the two-linear head.
//
// Reference stack for 1920 samples/frame: a causal frame-rate convolution
// (3 taps, D -> D) followed by transposed convolutions with strides 8, 6, 5, 8
// (product 1920), kernels of twice the stride and widths D -> 960 -> 512 ->
// 256 -> 1, GELU between layers. That is about 15.9M parameters at D = 512,
// close to four transformer layers plus the linear head (15.6M).
//
// A transposed layer with stride s and kernel K maps x[0..N) to
//   y[m] = b + sum over (n, k) with n*s + k = m, k < K of W_k^T x[n],
// keeping only y[0..N*s) (the tail that spills into the next frame is dropped).
// Streaming recomputes the stack over the last `context_frames` inputs and
// emits the newest frame's samples, so history older than the context has no
// effect.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "tmimi/config.hpp"
#include "tmimi/error.hpp"
#include "tmimi/numerics.hpp"

namespace tmimi {

struct DeconvConfig {
  std::size_t in_channels = 512;
  std::size_t pre_kernel = 3;                   // frame-rate causal conv taps
  std::vector<std::size_t> channels{960, 512, 256, 1};  // output width of each transposed layer
  std::vector<std::size_t> strides{8, 6, 5, 8};
  std::vector<std::size_t> kernels{16, 12, 10, 16};
  std::size_t context_frames = 5;

  std::size_t samples_per_frame() const {
    return std::accumulate(strides.begin(), strides.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t layer_in_channels(std::size_t l) const { return l == 0 ? in_channels : channels[l - 1]; }

  void validate() const {
    if (in_channels == 0 || pre_kernel == 0 || context_frames == 0)
      fail(ErrorKind::InvalidArgument, "deconv widths, pre_kernel and context must be positive");
    if (channels.empty() || channels.size() != strides.size() || channels.size() != kernels.size())
      fail(ErrorKind::InvalidArgument, "deconv channels/strides/kernels must have equal non-zero length");
    if (channels.back() != 1) fail(ErrorKind::InvalidArgument, "last deconv layer must output one channel");
    for (std::size_t l = 0; l < strides.size(); ++l)
      if (strides[l] == 0 || kernels[l] == 0 || channels[l] == 0)
        fail(ErrorKind::InvalidArgument, "deconv strides, kernels and channels must be positive");
  }

  // Reference stack for a decoder config; configs other than 1920 samples per
  // frame get a single transposed layer with stride samples_per_frame.
  static DeconvConfig reference_for(const DecoderConfig& c, std::size_t context = 5) {
    DeconvConfig d;
    d.in_channels = c.model_dim;
    d.context_frames = context;
    if (c.samples_per_frame != 1920) {
      d.channels = {1};
      d.strides = {c.samples_per_frame};
      d.kernels = {2 * c.samples_per_frame};
    }
    return d;
  }

  friend bool operator==(const DeconvConfig&, const DeconvConfig&) = default;
};

struct DeconvWeights {
  DeconvConfig config;
  Tensor2D pre_weight;  // [pre_kernel * in] x in, row tap*in + i
  std::vector<float> pre_bias;
  std::vector<Tensor2D> weights;  // per layer [K * Cin] x Cout, row k*Cin + i
  std::vector<std::vector<float>> biases;
};

inline std::size_t deconv_param_count(const DeconvConfig& c) {
  std::size_t n = c.pre_kernel * c.in_channels * c.in_channels + c.in_channels;
  for (std::size_t l = 0; l < c.channels.size(); ++l)
    n += c.kernels[l] * c.layer_in_channels(l) * c.channels[l] + c.channels[l];
  return n;
}

inline DeconvWeights deconv_init_random(const DeconvConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  DeconvWeights w;
  w.config = c;
  const float pre_bound = std::sqrt(1.0f / static_cast<float>(c.pre_kernel * c.in_channels));
  w.pre_weight = random_tensor(c.pre_kernel * c.in_channels, c.in_channels, rng, pre_bound);
  w.pre_bias.resize(c.in_channels);
  for (auto& b : w.pre_bias) b = rng.uniform_symmetric(pre_bound);
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    const std::size_t cin = c.layer_in_channels(l);
    const float bound = std::sqrt(1.0f / static_cast<float>(cin * c.kernels[l]));
    w.weights.push_back(random_tensor(c.kernels[l] * cin, c.channels[l], rng, bound));
    std::vector<float> b(c.channels[l]);
    for (auto& v : b) v = rng.uniform_symmetric(bound);
    w.biases.push_back(std::move(b));
  }
  return w;
}

namespace detail {

// out += x * W[first_row .. first_row + cin), a [cin x cout] slab of w.
inline void accumulate_block(const float* x, const Tensor2D& w, std::size_t first_row, std::size_t cin, float* out) {
  const std::size_t cout = w.cols();
  for (std::size_t i = 0; i < cin; ++i) {
    const float s = x[i];
    const float* wr = w.row(first_row + i).data();
    for (std::size_t o = 0; o < cout; ++o) out[o] += s * wr[o];
  }
  count_macs(static_cast<std::uint64_t>(cin) * cout);
}

}  // namespace detail

// Causal frame-rate convolution; taps that reach before the first row are skipped.
inline Tensor2D deconv_pre_conv(const Tensor2D& x, const DeconvWeights& w) {
  const auto& c = w.config;
  Tensor2D y(x.rows(), c.in_channels);
  for (std::size_t p = 0; p < x.rows(); ++p) {
    auto out = y.row(p);
    std::copy(w.pre_bias.begin(), w.pre_bias.end(), out.begin());
    for (std::size_t tap = 0; tap < c.pre_kernel && tap <= p; ++tap)
      detail::accumulate_block(x.row(p - tap).data(), w.pre_weight, tap * c.in_channels, c.in_channels, out.data());
  }
  return y;
}

// One transposed layer: [N x Cin] -> [N*s x Cout].
inline Tensor2D conv_transpose_1d(const Tensor2D& x, const Tensor2D& weight, std::span<const float> bias,
                                  std::size_t stride, std::size_t kernel) {
  const std::size_t cin = x.cols();
  const std::size_t cout = weight.cols();
  if (weight.rows() != kernel * cin || bias.size() != cout) fail(ErrorKind::Shape, "conv_transpose_1d weight shape");
  const std::size_t out_len = x.rows() * stride;
  Tensor2D y(out_len, cout);
  for (std::size_t m = 0; m < out_len; ++m) std::copy(bias.begin(), bias.end(), y.row(m).begin());
  for (std::size_t n = 0; n < x.rows(); ++n)
    for (std::size_t k = 0; k < kernel && n * stride + k < out_len; ++k)
      detail::accumulate_block(x.row(n).data(), weight, k * cin, cin, y.row(n * stride + k).data());
  return y;
}

// Full stack over a block of frames: [N x in] -> N * samples_per_frame samples.
inline std::vector<float> deconv_stack(const Tensor2D& frames, const DeconvWeights& w) {
  const auto& c = w.config;
  Tensor2D h = deconv_pre_conv(frames, w);
  gelu_inplace(h.data());
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    h = conv_transpose_1d(h, w.weights[l], w.biases[l], c.strides[l], c.kernels[l]);
    if (l + 1 < c.channels.size()) gelu_inplace(h.data());
  }
  return h.values();
}

// Streaming baseline: keeps the last context_frames inputs and recomputes the
// stack over them for every new frame.
class DeconvStream {
 public:
  explicit DeconvStream(const DeconvWeights& weights) : weights_(&weights) { weights.config.validate(); }

  std::vector<float> step(std::span<const float> latent) {
    const auto& c = weights_->config;
    if (latent.size() != c.in_channels) fail(ErrorKind::Shape, "deconv input width");
    history_.emplace_back(latent.begin(), latent.end());
    if (history_.size() > c.context_frames) history_.pop_front();
    Tensor2D block(history_.size(), c.in_channels);
    for (std::size_t r = 0; r < history_.size(); ++r) std::copy(history_[r].begin(), history_[r].end(), block.row(r).begin());
    const auto all = deconv_stack(block, *weights_);
    const std::size_t spf = c.samples_per_frame();
    return {all.end() - static_cast<std::ptrdiff_t>(spf), all.end()};
  }

  void reset() { history_.clear(); }

 private:
  const DeconvWeights* weights_;
  std::deque<std::vector<float>> history_;
};

// Decodes latent frames [T x in] with the streaming definition: frame t is
// rendered from frames max(0, t - context + 1) ..= t.
inline std::vector<float> deconv_forward(const Tensor2D& frames, const DeconvWeights& weights) {
  if (frames.rows() == 0) fail(ErrorKind::InvalidArgument, "no frames to decode");
  DeconvStream stream(weights);
  std::vector<float> out;
  for (std::size_t t = 0; t < frames.rows(); ++t) {
    const auto chunk = stream.step(frames.row(t));
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  return out;
}

// Multiply-accumulates of one streaming step when `frames` inputs are held.
inline std::uint64_t deconv_flops(const DeconvConfig& c, std::size_t frames) {
  std::uint64_t taps = 0;
  for (std::size_t p = 0; p < frames; ++p) taps += std::min(p + 1, c.pre_kernel);
  std::uint64_t total = taps * c.in_channels * c.in_channels;
  std::uint64_t n = frames;
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    const std::uint64_t s = c.strides[l];
    std::uint64_t layer_taps = 0;
    for (std::uint64_t i = 0; i < n; ++i) layer_taps += std::min<std::uint64_t>(c.kernels[l], (n - i) * s);
    total += layer_taps * c.layer_in_channels(l) * c.channels[l];
    n *= s;
  }
  return total;
}

// Steady-state cost per frame, with the full context held.
inline std::uint64_t deconv_flops_per_frame(const DeconvConfig& c) { return deconv_flops(c, c.context_frames); }

}  // namespace tmimi
