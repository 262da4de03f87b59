#pragma once

// TMIM weight container (format version 1). Layout, all little-endian:
//
//   "TMIM"  u32 version
//   config: u32 num_layers, model_dim, ffn_dim, num_heads, attention_window,
//           head_hidden_dim, samples_per_frame, sample_rate; f32 frame_rate;
//           u32 num_codebooks, codebook_size, activation
//   u32 plan length, plan string (canonical PrecisionPlan text)
//   u32 tensor count, then per tensor:
//     u32 name length, name (utf-8), u8 dtype (0 f32, 1 i8, 2 i4 packed),
//     u32 rows, u32 cols, u8 scales present, u32 group size (0 unless i4),
//     u64 offset, u64 length   (offset relative to the payload start)
//   payload: per tensor, its f32 scales (if present) then its values;
//     i4 values are packed two per byte, low nibble first, 4-bit two's complement
//   u32 CRC-32 (zlib polynomial) of every preceding byte
//
// See docs/weights-format.md for the full description.

#include <zlib.h>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "tmimi/bytes.hpp"
#include "tmimi/model.hpp"

namespace tmimi {

inline constexpr char kWeightMagic[4] = {'T', 'M', 'I', 'M'};
inline constexpr std::uint32_t kWeightFormatVersion = 1;

enum class DType : std::uint8_t { F32 = 0, I8 = 1, I4 = 2 };

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

// Uniform init bound for a tensor: sqrt(1 / fan_in), where fan_in is the input
// width of a matrix, model_dim for the head bias and num_codebooks for the
// embedding tables (their rows are summed). Norm gains start at 1 and shifts at 0.
inline float init_bound(const TensorShape& s, const DecoderConfig& c) {
  if (s.is_matrix) return std::sqrt(1.0f / static_cast<float>(s.cols));
  if (s.name == "head.bias1") return std::sqrt(1.0f / static_cast<float>(c.model_dim));
  if (s.name.starts_with("embed.")) return std::sqrt(1.0f / static_cast<float>(c.num_codebooks));
  return 1.0f;
}

inline DecoderWeights init_random(const DecoderConfig& config, std::uint64_t seed) {
  DecoderWeights w = zero_weights(config);
  Rng rng(seed);
  visit_params(w, [&](const TensorShape& s, Param& p) {
    auto& t = std::get<Tensor2D>(p);
    if (s.name.ends_with(".gamma")) {
      std::fill(t.data().begin(), t.data().end(), 1.0f);
    } else if (s.name.ends_with(".beta")) {
      // zeros
    } else {
      const float bound = init_bound(s, config);
      for (float& v : t.data()) v = rng.uniform_symmetric(bound);
    }
  });
  return w;
}

// Scheme a tensor is stored with under a plan: layer and head matrices follow
// their block's scheme; vectors and embeddings stay f32.
inline QuantScheme storage_scheme(const TensorShape& s, const PrecisionPlan& plan) {
  if (!s.is_matrix) return QuantScheme::fp32();
  if (s.name.starts_with("layers.")) {
    const std::size_t l = std::stoul(s.name.substr(7));
    return plan.layer_schemes.at(l);
  }
  return plan.head_scheme;
}

// Returns weights with every matrix held as integers per the plan.
inline DecoderWeights quantize_weights(const DecoderWeights& weights, const PrecisionPlan& plan) {
  plan.validate(weights.config);
  DecoderWeights out = weights;
  visit_params(out, [&](const TensorShape& s, Param& p) {
    const QuantScheme scheme = storage_scheme(s, plan);
    if (scheme.is_fp32()) {
      p = to_dense(p);
    } else if (const auto* t = std::get_if<Tensor2D>(&p)) {
      p = quantize(*t, scheme);
    } else if (!(std::get<QuantizedTensor>(p).scheme == scheme)) {
      p = quantize(to_dense(p), scheme);
    }
  });
  return out;
}

struct LoadedWeights {
  DecoderWeights weights;
  PrecisionPlan plan;
};

namespace detail {

inline std::vector<std::uint8_t> pack_int4(const std::vector<std::int8_t>& values) {
  std::vector<std::uint8_t> out((values.size() + 1) / 2, 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto nibble = static_cast<std::uint8_t>(values[i] & 0x0F);
    out[i / 2] |= (i % 2 == 0) ? nibble : static_cast<std::uint8_t>(nibble << 4);
  }
  return out;
}

inline std::vector<std::int8_t> unpack_int4(const std::uint8_t* data, std::size_t count) {
  std::vector<std::int8_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint8_t nibble = (i % 2 == 0) ? (data[i / 2] & 0x0F) : (data[i / 2] >> 4);
    out[i] = static_cast<std::int8_t>(nibble >= 8 ? static_cast<int>(nibble) - 16 : nibble);
  }
  return out;
}

inline void write_config(ByteWriter& w, const DecoderConfig& c) {
  for (std::size_t v : {c.num_layers, c.model_dim, c.ffn_dim, c.num_heads, c.attention_window, c.head_hidden_dim,
                        c.samples_per_frame})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(c.sample_rate);
  w.f32(c.frame_rate);
  w.u32(static_cast<std::uint32_t>(c.num_codebooks));
  w.u32(static_cast<std::uint32_t>(c.codebook_size));
  w.u32(static_cast<std::uint32_t>(c.activation));
}

inline DecoderConfig read_config(ByteReader& r) {
  DecoderConfig c;
  c.num_layers = r.u32();
  c.model_dim = r.u32();
  c.ffn_dim = r.u32();
  c.num_heads = r.u32();
  c.attention_window = r.u32();
  c.head_hidden_dim = r.u32();
  c.samples_per_frame = r.u32();
  c.sample_rate = r.u32();
  c.frame_rate = r.f32();
  c.num_codebooks = r.u32();
  c.codebook_size = r.u32();
  const std::uint32_t act = r.u32();
  if (act != static_cast<std::uint32_t>(Activation::GeluTanh)) fail(ErrorKind::Format, "unknown activation id");
  c.activation = Activation::GeluTanh;
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("invalid config block: ") + e.what());
  }
  return c;
}

}  // namespace detail

// Serializes weights under a plan. f32 matrices that the plan quantizes are
// quantized here; already-quantized matrices must match the plan. All checks
// happen before anything touches the filesystem.
inline std::vector<std::uint8_t> encode_weights(const DecoderWeights& weights, const PrecisionPlan& plan) {
  weights.config.validate();
  plan.validate(weights.config);
  check_shapes(weights);

  struct Entry {
    std::string name;
    DType dtype;
    std::size_t rows, cols;
    std::uint32_t group;
    std::vector<std::uint8_t> bytes;  // scales then values
    bool has_scales;
  };
  std::vector<Entry> entries;
  visit_params(weights, [&](const TensorShape& s, const Param& p) {
    const QuantScheme scheme = storage_scheme(s, plan);
    Entry e{s.name, DType::F32, s.rows, s.cols, 0, {}, false};
    ByteWriter b;
    if (scheme.is_fp32()) {
      if (std::holds_alternative<QuantizedTensor>(p))
        fail(ErrorKind::InconsistentPlan, "tensor " + s.name + " is quantized but the plan stores it as fp32");
      for (float v : std::get<Tensor2D>(p).data()) b.f32(v);
    } else {
      QuantizedTensor q;
      if (const auto* t = std::get_if<Tensor2D>(&p)) {
        q = quantize(*t, scheme);
      } else {
        q = std::get<QuantizedTensor>(p);
        if (!(q.scheme == scheme))
          fail(ErrorKind::InconsistentPlan, "tensor " + s.name + " is stored as " + q.scheme.to_string() +
                                                " but the plan says " + scheme.to_string());
      }
      e.has_scales = true;
      for (float sc : q.scales) b.f32(sc);
      if (scheme.kind == QuantKind::Int4GroupWise) {
        e.dtype = DType::I4;
        e.group = static_cast<std::uint32_t>(scheme.group_size);
        b.bytes(detail::pack_int4(q.values));
      } else {
        e.dtype = DType::I8;
        for (auto v : q.values) b.u8(static_cast<std::uint8_t>(v));
      }
    }
    e.bytes = b.take();
    entries.push_back(std::move(e));
  });

  ByteWriter w;
  w.bytes(std::string_view(kWeightMagic, 4));
  w.u32(kWeightFormatVersion);
  detail::write_config(w, weights.config);
  const std::string plan_text = plan.to_string();
  w.u32(static_cast<std::uint32_t>(plan_text.size()));
  w.bytes(plan_text);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    w.u8(static_cast<std::uint8_t>(e.dtype));
    w.u32(static_cast<std::uint32_t>(e.rows));
    w.u32(static_cast<std::uint32_t>(e.cols));
    w.u8(e.has_scales ? 1 : 0);
    w.u32(e.group);
    w.u64(offset);
    w.u64(e.bytes.size());
    offset += e.bytes.size();
  }
  for (const auto& e : entries) w.bytes(e.bytes);
  auto& buf = w.buffer();
  const std::uint32_t crc = crc32_of(buf.data(), buf.size());
  w.u32(crc);
  return w.take();
}

inline LoadedWeights decode_weights(const std::vector<std::uint8_t>& data) {
  if (data.size() < 8) fail(ErrorKind::Truncated, "file shorter than its header");
  if (std::memcmp(data.data(), kWeightMagic, 4) != 0) fail(ErrorKind::BadMagic, "not a TMIM weight file");
  ByteReader head(data.data() + 4, 4);
  const std::uint32_t version = head.u32();
  if (version != kWeightFormatVersion)
    fail(ErrorKind::UnsupportedVersion, "unsupported version " + std::to_string(version) + " (this build reads " +
                                            std::to_string(kWeightFormatVersion) + ")");
  if (data.size() < 12) fail(ErrorKind::Truncated, "file too short for a checksum");
  const std::size_t body = data.size() - 4;
  ByteReader tail(data.data() + body, 4);
  if (tail.u32() != crc32_of(data.data(), body)) fail(ErrorKind::Checksum, "CRC-32 mismatch");

  ByteReader r(data.data() + 8, body - 8);
  LoadedWeights out;
  const DecoderConfig config = detail::read_config(r);
  const std::uint32_t plan_len = r.u32();
  out.plan = PrecisionPlan::parse(r.string(plan_len));
  out.plan.validate(config);

  struct Entry {
    DType dtype;
    std::size_t rows, cols;
    bool has_scales;
    std::uint32_t group;
    std::uint64_t offset, length;
  };
  std::map<std::string, Entry> table;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.string(r.u32());
    Entry e{};
    const std::uint8_t dt = r.u8();
    if (dt > 2) fail(ErrorKind::Format, "tensor " + name + " has unknown dtype " + std::to_string(dt));
    e.dtype = static_cast<DType>(dt);
    e.rows = r.u32();
    e.cols = r.u32();
    e.has_scales = r.u8() != 0;
    e.group = r.u32();
    e.offset = r.u64();
    e.length = r.u64();
    if (!table.emplace(name, e).second) fail(ErrorKind::Format, "tensor " + name + " appears twice");
  }
  const std::size_t payload_start = 8 + r.position();
  const std::size_t payload_size = body - payload_start;

  DecoderWeights w;
  w.config = config;
  w.embeddings.resize(config.num_codebooks);
  w.layers.resize(config.num_layers);
  std::size_t seen = 0;
  visit_params(w, [&](const TensorShape& s, Param& p) {
    const auto it = table.find(s.name);
    if (it == table.end()) fail(ErrorKind::Format, "missing tensor " + s.name);
    ++seen;
    const Entry& e = it->second;
    if (e.rows != s.rows || e.cols != s.cols)
      fail(ErrorKind::Shape, "tensor " + s.name + " is " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                                 ", config needs " + std::to_string(s.rows) + "x" + std::to_string(s.cols));
    if (e.offset > payload_size || e.length > payload_size - e.offset)
      fail(ErrorKind::Truncated, "tensor " + s.name + " extends past the payload");
    ByteReader t(data.data() + payload_start + e.offset, e.length);
    const QuantScheme scheme = storage_scheme(s, out.plan);
    const std::size_t n = s.count();
    const DType expected = scheme.is_fp32() ? DType::F32
                           : scheme.kind == QuantKind::Int4GroupWise ? DType::I4 : DType::I8;
    if (e.dtype != expected || e.has_scales != !scheme.is_fp32() ||
        (expected == DType::I4 && e.group != scheme.group_size))
      fail(ErrorKind::InconsistentPlan, "tensor " + s.name + " dtype does not match plan " + out.plan.to_string());
    if (e.dtype == DType::F32) {
      Tensor2D dense(s.rows, s.cols);
      for (float& v : dense.data()) v = t.f32();
      p = std::move(dense);
    } else {
      QuantizedTensor q;
      q.rows = s.rows;
      q.cols = s.cols;
      q.scheme = scheme;
      q.scales.resize(q.rows * q.groups_per_row());
      for (float& sc : q.scales) sc = t.f32();
      if (e.dtype == DType::I4) {
        q.values = detail::unpack_int4(t.take((n + 1) / 2), n);
      } else {
        const std::uint8_t* raw = t.take(n);
        q.values.assign(reinterpret_cast<const std::int8_t*>(raw), reinterpret_cast<const std::int8_t*>(raw) + n);
      }
      const int qmax = scheme.qmax();
      for (auto v : q.values)
        if (v < -qmax || v > qmax) fail(ErrorKind::Format, "tensor " + s.name + " has out-of-range integers");
      p = std::move(q);
    }
    if (t.remaining() != 0) fail(ErrorKind::Format, "tensor " + s.name + " has trailing bytes");
  });
  if (seen != table.size()) fail(ErrorKind::Format, "file holds tensors the architecture does not use");
  out.weights = std::move(w);
  return out;
}

inline void save(const DecoderWeights& weights, const PrecisionPlan& plan, const std::string& path) {
  write_file(path, encode_weights(weights, plan));
}

inline LoadedWeights load(const std::string& path) { return decode_weights(read_file(path)); }

}  // namespace tmimi
