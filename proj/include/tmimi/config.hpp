#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tmimi/error.hpp"

namespace tmimi {

enum class Activation : std::uint32_t { GeluTanh = 0 };

// Architecture of the transformer-only decoder.
//
// The defaults reproduce the 12-layer model: 12 x (4*512^2 + 2*512*2048 + 4*512)
// = 37,773,312 transformer parameters, plus a 512 -> 1248 (+bias) -> 1920 head
// (3,036,384) and a final norm (1,024), for 40,810,720 parameters in total.
struct DecoderConfig {
  std::size_t num_layers = 12;
  std::size_t model_dim = 512;
  std::size_t ffn_dim = 2048;
  std::size_t num_heads = 8;
  std::size_t attention_window = 250;  // frames, current frame included
  std::size_t head_hidden_dim = 1248;
  std::size_t samples_per_frame = 1920;
  std::uint32_t sample_rate = 24000;
  float frame_rate = 12.5f;
  std::size_t num_codebooks = 8;
  std::size_t codebook_size = 2048;
  Activation activation = Activation::GeluTanh;

  std::size_t head_dim() const { return model_dim / num_heads; }

  // Milliseconds of audio produced per frame (80 ms by default).
  double frame_ms() const { return 1000.0 * static_cast<double>(samples_per_frame) / sample_rate; }

  void validate() const {
    if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0)
      fail(ErrorKind::InvalidArgument, "model_dim must be a positive multiple of num_heads");
    if (attention_window < 1) fail(ErrorKind::InvalidArgument, "attention_window must be >= 1");
    if (ffn_dim == 0 || head_hidden_dim == 0 || samples_per_frame == 0)
      fail(ErrorKind::InvalidArgument, "dimensions must be positive");
    if (num_codebooks == 0 || codebook_size == 0 || codebook_size > 65536)
      fail(ErrorKind::InvalidArgument, "codebooks must be non-empty with at most 65536 entries");
    if (!(frame_rate > 0.0f) ||
        static_cast<double>(samples_per_frame) * static_cast<double>(frame_rate) != static_cast<double>(sample_rate))
      fail(ErrorKind::InvalidArgument, "samples_per_frame * frame_rate must equal sample_rate exactly");
  }

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

// Presets mirroring the layer/linear-dimension ablation. "Linear dim" refers to
// the final linear layers; the 3072 variant scales the head's hidden width by
// 3072/2048 (1248 -> 1872), which is the reading that yields 42.3M parameters.
inline std::vector<std::string> preset_names() {
  return {"t-mimi-12x2048", "t-mimi-8", "t-mimi-12x3072", "t-mimi-16x2048"};
}

inline DecoderConfig preset(std::string_view name) {
  DecoderConfig c;
  if (name == "t-mimi-12x2048" || name == "default") return c;
  if (name == "t-mimi-8") {
    c.num_layers = 8;
    return c;
  }
  if (name == "t-mimi-12x3072") {
    c.head_hidden_dim = 1872;
    return c;
  }
  if (name == "t-mimi-16x2048") {
    c.num_layers = 16;
    return c;
  }
  fail(ErrorKind::InvalidArgument, "unknown preset '" + std::string(name) + "'");
}

// One parameter tensor of the decoder. Matrices are stored [out x in] so that
// each row is one output channel; vectors are stored as 1 x n.
struct TensorShape {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_matrix = false;

  std::size_t count() const { return rows * cols; }
};

inline std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

inline std::vector<TensorShape> layer_tensor_shapes(const DecoderConfig& c, std::size_t layer) {
  const std::string p = layer_prefix(layer);
  const std::size_t d = c.model_dim;
  const std::size_t f = c.ffn_dim;
  return {
      {p + "norm1.gamma", 1, d, false}, {p + "norm1.beta", 1, d, false},
      {p + "attn.q", d, d, true},       {p + "attn.k", d, d, true},
      {p + "attn.v", d, d, true},       {p + "attn.o", d, d, true},
      {p + "norm2.gamma", 1, d, false}, {p + "norm2.beta", 1, d, false},
      {p + "ffn.in", f, d, true},       {p + "ffn.out", d, f, true},
  };
}

// Final norm plus the two-linear upsampling head (bias on the first only).
inline std::vector<TensorShape> head_tensor_shapes(const DecoderConfig& c) {
  return {
      {"final_norm.gamma", 1, c.model_dim, false},
      {"final_norm.beta", 1, c.model_dim, false},
      {"head.linear1", c.head_hidden_dim, c.model_dim, true},
      {"head.bias1", 1, c.head_hidden_dim, false},
      {"head.linear2", c.samples_per_frame, c.head_hidden_dim, true},
  };
}

inline std::vector<TensorShape> embedding_tensor_shapes(const DecoderConfig& c) {
  std::vector<TensorShape> out;
  for (std::size_t q = 0; q < c.num_codebooks; ++q)
    out.push_back({"embed." + std::to_string(q), c.codebook_size, c.model_dim, false});
  return out;
}

inline std::size_t total_count(const std::vector<TensorShape>& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += s.count();
  return n;
}

inline std::size_t layer_param_count(const DecoderConfig& c) { return total_count(layer_tensor_shapes(c, 0)); }
inline std::size_t head_param_count(const DecoderConfig& c) { return total_count(head_tensor_shapes(c)); }
inline std::size_t embedding_param_count(const DecoderConfig& c) {
  return c.num_codebooks * c.codebook_size * c.model_dim;
}

// Decoder parameters excluding the codebook embedding tables, which are the
// same for every architecture variant.
inline std::size_t param_count(const DecoderConfig& c) {
  return c.num_layers * layer_param_count(c) + head_param_count(c);
}

}  // namespace tmimi
