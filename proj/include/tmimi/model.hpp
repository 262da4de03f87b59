#pragma once

// Transformer-only codec decoder.
//
//   frame tokens --(sum of codebook embeddings)--> x            [1 x D]
//   for each layer:  x += Wo * attn(LN1(x))      (causal, last W frames)
//                    x += Wout * gelu(Win * LN2(x))
//   h = LN_final(x);  samples = W2 * (W1 * h + b1)              [1 x S]
//
// Each frame yields samples_per_frame samples; frames are concatenated with no
// overlap-add. Norms are pre-norm, there is no positional encoding, and the
// attention window W counts the current frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "tmimi/config.hpp"
#include "tmimi/error.hpp"
#include "tmimi/numerics.hpp"
#include "tmimi/quantization.hpp"

namespace tmimi {

// A parameter tensor: dense float32, or integer payload plus scales as loaded
// from a quantized weight file.
using Param = std::variant<Tensor2D, QuantizedTensor>;

inline std::size_t param_rows(const Param& p) {
  return std::visit([](const auto& t) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Tensor2D>) return t.rows();
    else return t.rows;
  }, p);
}

inline std::size_t param_cols(const Param& p) {
  return std::visit([](const auto& t) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Tensor2D>) return t.cols();
    else return t.cols;
  }, p);
}

inline Tensor2D to_dense(const Param& p) {
  if (const auto* t = std::get_if<Tensor2D>(&p)) return *t;
  return dequantize(std::get<QuantizedTensor>(p));
}

struct LayerWeights {
  Param norm1_gamma, norm1_beta;
  Param attn_q, attn_k, attn_v, attn_o;
  Param norm2_gamma, norm2_beta;
  Param ffn_in, ffn_out;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct HeadWeights {
  Param final_norm_gamma, final_norm_beta;
  Param linear1, bias1, linear2;

  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

struct DecoderWeights {
  DecoderConfig config;
  std::vector<Param> embeddings;  // one codebook_size x model_dim table per codebook
  std::vector<LayerWeights> layers;
  HeadWeights head;

  friend bool operator==(const DecoderWeights&, const DecoderWeights&) = default;
};

// Calls f(shape, param) for every tensor in a fixed order: embeddings, layers
// in order, then final norm and head. Names and shapes come from the config.
template <class Weights, class F>
void visit_params(Weights& w, F&& f) {
  const auto emb = embedding_tensor_shapes(w.config);
  for (std::size_t q = 0; q < emb.size(); ++q) f(emb[q], w.embeddings[q]);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto shapes = layer_tensor_shapes(w.config, l);
    auto& L = w.layers[l];
    const std::array params{&L.norm1_gamma, &L.norm1_beta, &L.attn_q, &L.attn_k, &L.attn_v,
                            &L.attn_o,      &L.norm2_gamma, &L.norm2_beta, &L.ffn_in, &L.ffn_out};
    for (std::size_t i = 0; i < shapes.size(); ++i) f(shapes[i], *params[i]);
  }
  const auto head = head_tensor_shapes(w.config);
  auto& H = w.head;
  const std::array params{&H.final_norm_gamma, &H.final_norm_beta, &H.linear1, &H.bias1, &H.linear2};
  for (std::size_t i = 0; i < head.size(); ++i) f(head[i], *params[i]);
}

// Allocates zero-filled weights with every tensor shaped per the config.
inline DecoderWeights zero_weights(const DecoderConfig& config) {
  config.validate();
  DecoderWeights w;
  w.config = config;
  w.embeddings.resize(config.num_codebooks);
  w.layers.resize(config.num_layers);
  visit_params(w, [](const TensorShape& s, Param& p) { p = Tensor2D(s.rows, s.cols); });
  return w;
}

inline void check_shapes(const DecoderWeights& w) {
  if (w.embeddings.size() != w.config.num_codebooks || w.layers.size() != w.config.num_layers)
    fail(ErrorKind::Shape, "weights do not match config layer/codebook counts");
  visit_params(w, [](const TensorShape& s, const Param& p) {
    if (param_rows(p) != s.rows || param_cols(p) != s.cols)
      fail(ErrorKind::Shape, "tensor " + s.name + " is " + std::to_string(param_rows(p)) + "x" +
                                 std::to_string(param_cols(p)) + ", expected " + std::to_string(s.rows) + "x" +
                                 std::to_string(s.cols));
  });
}

// First n layers of a decoder, keeping embeddings and head.
inline DecoderWeights truncate_layers(const DecoderWeights& w, std::size_t n) {
  if (n > w.layers.size()) fail(ErrorKind::InvalidArgument, "cannot keep more layers than the model has");
  DecoderWeights out = w;
  out.config.num_layers = n;
  out.layers.resize(n);
  return out;
}

struct FrameInput {
  std::variant<std::vector<std::uint32_t>, std::vector<float>> value;

  static FrameInput tokens(std::vector<std::uint32_t> t) { return {std::move(t)}; }
  static FrameInput latent(std::vector<float> v) { return {std::move(v)}; }

  bool is_tokens() const { return value.index() == 0; }
  const std::vector<std::uint32_t>& token_ids() const { return std::get<0>(value); }
  const std::vector<float>& latent_values() const { return std::get<1>(value); }

  friend bool operator==(const FrameInput&, const FrameInput&) = default;
};

inline FrameInput random_token_frame(const DecoderConfig& c, Rng& rng) {
  std::vector<std::uint32_t> t(c.num_codebooks);
  for (auto& v : t) v = static_cast<std::uint32_t>(rng.below(c.codebook_size));
  return FrameInput::tokens(std::move(t));
}

inline FrameInput random_latent_frame(const DecoderConfig& c, Rng& rng) {
  std::vector<float> v(c.model_dim);
  for (auto& x : v) x = rng.uniform_symmetric(1.0f);
  return FrameInput::latent(std::move(v));
}

inline std::vector<FrameInput> random_frames(const DecoderConfig& config, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FrameInput> frames;
  frames.reserve(n);
  for (std::size_t i = 0; i < n; ++i) frames.push_back(random_token_frame(config, rng));
  return frames;
}

inline void validate_frame(const FrameInput& frame, const DecoderConfig& c) {
  if (frame.is_tokens()) {
    const auto& t = frame.token_ids();
    if (t.size() != c.num_codebooks)
      fail(ErrorKind::Shape, "frame has " + std::to_string(t.size()) + " tokens, expected " +
                                 std::to_string(c.num_codebooks));
    for (auto id : t)
      if (id >= c.codebook_size)
        fail(ErrorKind::InvalidArgument, "token " + std::to_string(id) + " outside codebook of size " +
                                             std::to_string(c.codebook_size));
  } else {
    const auto& v = frame.latent_values();
    if (v.size() != c.model_dim)
      fail(ErrorKind::Shape, "latent of width " + std::to_string(v.size()) + ", expected " + std::to_string(c.model_dim));
    for (float x : v)
      if (!std::isfinite(x)) fail(ErrorKind::NonFinite, "latent frame contains non-finite values");
  }
}

namespace detail {

inline void embed_into(const FrameInput& frame, const std::vector<Tensor2D>& tables, const DecoderConfig& c,
                       std::span<float> out) {
  validate_frame(frame, c);
  if (!frame.is_tokens()) {
    std::copy(frame.latent_values().begin(), frame.latent_values().end(), out.begin());
    return;
  }
  std::fill(out.begin(), out.end(), 0.0f);
  const auto& ids = frame.token_ids();
  for (std::size_t q = 0; q < ids.size(); ++q) {
    const auto row = tables[q].row(ids[q]);
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += row[d];
  }
}

}  // namespace detail

// Sum over codebooks of the selected embedding rows, or the latent unchanged.
inline std::vector<float> embed_frame(const FrameInput& frame, const DecoderWeights& weights) {
  std::vector<Tensor2D> tables;
  if (frame.is_tokens())
    for (const auto& e : weights.embeddings) tables.push_back(to_dense(e));
  std::vector<float> out(weights.config.model_dim);
  detail::embed_into(frame, tables, weights.config, out);
  return out;
}

// Multi-head attention for one query row over n keys, visited oldest first.
// key_at(j) / value_at(j) return pointers to model_dim floats.
template <class KeyAt, class ValueAt>
void attend_row(const float* query, std::size_t n_keys, KeyAt&& key_at, ValueAt&& value_at, std::size_t num_heads,
                std::size_t head_dim, float* out, std::vector<float>& scores) {
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  scores.resize(n_keys);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const std::size_t off = h * head_dim;
    const float* qh = query + off;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < n_keys; ++j) {
      const float* kh = key_at(j) + off;
      float dot = 0.0f;
      for (std::size_t d = 0; d < head_dim; ++d) dot += qh[d] * kh[d];
      scores[j] = dot * scale;
      mx = std::max(mx, scores[j]);
    }
    float sum = 0.0f;
    for (std::size_t j = 0; j < n_keys; ++j) {
      scores[j] = std::exp(scores[j] - mx);
      sum += scores[j];
    }
    const float inv = 1.0f / sum;
    float* oh = out + off;
    std::fill(oh, oh + head_dim, 0.0f);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const float p = scores[j] * inv;
      const float* vh = value_at(j) + off;
      for (std::size_t d = 0; d < head_dim; ++d) oh[d] += p * vh[d];
    }
  }
  count_macs(2ull * n_keys * num_heads * head_dim);
}

// A linear map with fake-quantized weights held transposed ([in x out]) so the
// product runs as a plain row-major matmul.
struct PreparedLinear {
  Tensor2D weight_t;
  bool quant_input = false;  // dynamic int8 on the input rows

  Tensor2D apply(const Tensor2D& x) const {
    if (quant_input) return matmul(dynamic_quant_activations(x), weight_t);
    return matmul(x, weight_t);
  }
};

inline PreparedLinear prepare_linear(const Param& p, QuantScheme scheme, bool activation_quant) {
  Tensor2D effective;
  if (const auto* q = std::get_if<QuantizedTensor>(&p)) {
    effective = q->scheme == scheme ? dequantize(*q) : fake_quantize(dequantize(*q), scheme);
  } else {
    effective = fake_quantize(std::get<Tensor2D>(p), scheme);
  }
  return {effective.transposed(), activation_quant && !scheme.is_fp32()};
}

struct PreparedLayer {
  std::vector<float> norm1_gamma, norm1_beta, norm2_gamma, norm2_beta;
  PreparedLinear q, k, v, o, ffn_in, ffn_out;
};

// Decoder weights with the precision plan applied once: every matrix is
// fake-quantized per its block's scheme and stored ready for inference.
// Immutable after construction and safe to share between threads.
class PreparedDecoder {
 public:
  PreparedDecoder(const DecoderWeights& weights, const PrecisionPlan& plan) : config_(weights.config), plan_(plan) {
    config_.validate();
    plan_.validate(config_);
    check_shapes(weights);
    for (const auto& e : weights.embeddings) embeddings_.push_back(to_dense(e));
    auto vec = [](const Param& p) { return to_dense(p).values(); };
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      const auto& src = weights.layers[l];
      const QuantScheme s = plan_.layer_schemes[l];
      const bool aq = plan_.activation_quant;
      layers_.push_back({vec(src.norm1_gamma), vec(src.norm1_beta), vec(src.norm2_gamma), vec(src.norm2_beta),
                         prepare_linear(src.attn_q, s, aq), prepare_linear(src.attn_k, s, aq),
                         prepare_linear(src.attn_v, s, aq), prepare_linear(src.attn_o, s, aq),
                         prepare_linear(src.ffn_in, s, aq), prepare_linear(src.ffn_out, s, aq)});
    }
    final_gamma_ = vec(weights.head.final_norm_gamma);
    final_beta_ = vec(weights.head.final_norm_beta);
    head1_ = prepare_linear(weights.head.linear1, plan_.head_scheme, plan_.activation_quant);
    bias1_ = vec(weights.head.bias1);
    head2_ = prepare_linear(weights.head.linear2, plan_.head_scheme, plan_.activation_quant);
  }

  const DecoderConfig& config() const { return config_; }
  const PrecisionPlan& plan() const { return plan_; }
  const std::vector<PreparedLayer>& layers() const { return layers_; }

  Tensor2D embed(std::span<const FrameInput> frames) const {
    Tensor2D x(frames.size(), config_.model_dim);
    for (std::size_t t = 0; t < frames.size(); ++t) detail::embed_into(frames[t], embeddings_, config_, x.row(t));
    return x;
  }

  // Attention and FFN sublayers of one layer for a block of consecutive rows.
  // attend(rows, q, k, v, out) fills the attention output for every row.
  template <class Attend>
  void run_layer(std::size_t l, Tensor2D& x, Attend&& attend) const {
    const auto& L = layers_[l];
    const Tensor2D h = layer_norm(x, L.norm1_gamma, L.norm1_beta);
    const Tensor2D q = L.q.apply(h);
    const Tensor2D k = L.k.apply(h);
    const Tensor2D v = L.v.apply(h);
    Tensor2D a(x.rows(), config_.model_dim);
    attend(q, k, v, a);
    add_inplace(x, L.o.apply(a));
    Tensor2D f = L.ffn_in.apply(layer_norm(x, L.norm2_gamma, L.norm2_beta));
    gelu_inplace(f.data());
    add_inplace(x, L.ffn_out.apply(f));
  }

  // Final norm and the two-linear head: one row of hidden state per frame in,
  // samples_per_frame samples per frame out.
  Tensor2D final_hidden(const Tensor2D& x) const { return layer_norm(x, final_gamma_, final_beta_); }

  Tensor2D head(const Tensor2D& hidden) const {
    Tensor2D z = head1_.apply(hidden);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias1_[j];
    }
    return head2_.apply(z);
  }

  // Causal windowed attention over a whole sequence: frame t sees frames
  // max(0, t - W + 1) ..= t.
  Tensor2D hidden_offline(std::span<const FrameInput> frames) const {
    if (frames.empty()) fail(ErrorKind::InvalidArgument, "no frames to decode");
    Tensor2D x = embed(frames);
    std::vector<float> scores;
    const std::size_t window = config_.attention_window;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      run_layer(l, x, [&](const Tensor2D& q, const Tensor2D& k, const Tensor2D& v, Tensor2D& a) {
        for (std::size_t t = 0; t < q.rows(); ++t) {
          const std::size_t first = t + 1 > window ? t + 1 - window : 0;
          attend_row(q.row(t).data(), t + 1 - first, [&](std::size_t j) { return k.row(first + j).data(); },
                     [&](std::size_t j) { return v.row(first + j).data(); }, config_.num_heads, config_.head_dim(),
                     a.row(t).data(), scores);
        }
      });
    }
    return final_hidden(x);
  }

  std::vector<float> forward(std::span<const FrameInput> frames) const {
    return head(hidden_offline(frames)).values();
  }

 private:
  static void add_inplace(Tensor2D& x, const Tensor2D& y) {
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += ys[i];
  }

  DecoderConfig config_;
  PrecisionPlan plan_;
  std::vector<Tensor2D> embeddings_;
  std::vector<PreparedLayer> layers_;
  std::vector<float> final_gamma_, final_beta_, bias1_;
  PreparedLinear head1_, head2_;
};

// Decodes a whole sequence at once. Output length is frames * samples_per_frame.
inline std::vector<float> forward_offline(std::span<const FrameInput> frames, const DecoderWeights& weights,
                                          const PrecisionPlan& plan) {
  if (frames.empty()) fail(ErrorKind::InvalidArgument, "no frames to decode");
  return PreparedDecoder(weights, plan).forward(frames);
}

inline std::vector<float> forward_offline(std::span<const FrameInput> frames, const DecoderWeights& weights) {
  return forward_offline(frames, weights, PrecisionPlan::uniform(weights.config.num_layers, QuantScheme::fp32()));
}

// Multiply-accumulates for one new frame with `context` frames visible to
// attention (the window when omitted): projections, attention scores and
// weighted values, FFN, and the head.
inline std::uint64_t flops_per_frame(const DecoderConfig& c, std::size_t context) {
  const std::uint64_t d = c.model_dim;
  const std::uint64_t keys = std::min(context, c.attention_window);
  const std::uint64_t per_layer = 4 * d * d + 2 * d * c.ffn_dim + 2 * keys * d;
  return c.num_layers * per_layer + d * c.head_hidden_dim + c.head_hidden_dim * c.samples_per_frame;
}

inline std::uint64_t flops_per_frame(const DecoderConfig& c) { return flops_per_frame(c, c.attention_window); }

}  // namespace tmimi
