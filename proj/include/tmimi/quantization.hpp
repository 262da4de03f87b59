#pragma once

// Symmetric (zero-point 0) integer quantization for weights and activations.
//
// Scales are max|x| / qmax, snapped to the nearest value s with
// fl(fl(qmax * s) / qmax) == s so that re-quantizing a dequantized tensor
// reproduces the same scale bit for bit. Values are round(x / s) with ties
// away from zero (std::round), clamped to [-qmax, qmax]. A channel or group
// whose entries are all zero gets scale 1 and zero values.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tmimi/config.hpp"
#include "tmimi/error.hpp"
#include "tmimi/numerics.hpp"

namespace tmimi {

enum class QuantKind : std::uint8_t { Fp32 = 0, Int8PerChannel = 1, Int4GroupWise = 2, Int8DynamicActivation = 3 };

inline constexpr std::size_t kDefaultGroupSize = 32;

struct QuantScheme {
  QuantKind kind = QuantKind::Fp32;
  std::size_t group_size = kDefaultGroupSize;  // meaningful for Int4GroupWise only

  static QuantScheme fp32() { return {QuantKind::Fp32, kDefaultGroupSize}; }
  static QuantScheme int8() { return {QuantKind::Int8PerChannel, kDefaultGroupSize}; }
  static QuantScheme int4(std::size_t group = kDefaultGroupSize) { return {QuantKind::Int4GroupWise, group}; }

  bool is_fp32() const { return kind == QuantKind::Fp32; }

  unsigned bits() const {
    switch (kind) {
      case QuantKind::Fp32: return 32;
      case QuantKind::Int4GroupWise: return 4;
      case QuantKind::Int8PerChannel:
      case QuantKind::Int8DynamicActivation: return 8;
    }
    return 32;
  }

  int qmax() const { return kind == QuantKind::Int4GroupWise ? 7 : 127; }

  std::string to_string() const {
    switch (kind) {
      case QuantKind::Fp32: return "fp32";
      case QuantKind::Int8PerChannel: return "int8";
      case QuantKind::Int4GroupWise: return "int4g" + std::to_string(group_size);
      case QuantKind::Int8DynamicActivation: return "int8dyn";
    }
    return "?";
  }

  static QuantScheme parse(std::string_view s) {
    if (s == "fp32") return fp32();
    if (s == "int8") return int8();
    if (s == "int4") return int4();
    if (s.starts_with("int4g")) {
      std::size_t g = 0;
      const auto digits = s.substr(5);
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), g);
      if (ec != std::errc() || ptr != digits.data() + digits.size() || g == 0)
        fail(ErrorKind::PlanParse, "bad int4 group size in '" + std::string(s) + "'");
      return int4(g);
    }
    fail(ErrorKind::PlanParse, "unknown scheme '" + std::string(s) + "' (expected fp32, int8 or int4g<N>)");
  }

  friend bool operator==(const QuantScheme& a, const QuantScheme& b) {
    if (a.kind != b.kind) return false;
    return a.kind != QuantKind::Int4GroupWise || a.group_size == b.group_size;
  }
};

struct QuantizedTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  QuantScheme scheme;
  std::vector<std::int8_t> values;  // rows * cols, row-major
  std::vector<float> scales;        // rows * groups_per_row()

  // Columns covered by one scale. The last group of a row is short when
  // group_size does not divide cols.
  std::size_t group_width() const {
    return scheme.kind == QuantKind::Int4GroupWise ? std::min(scheme.group_size, cols) : cols;
  }
  std::size_t groups_per_row() const {
    const std::size_t g = group_width();
    return g == 0 ? 0 : (cols + g - 1) / g;
  }
  float scale_at(std::size_t r, std::size_t c) const { return scales[r * groups_per_row() + c / group_width()]; }

  friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;
};

inline float snapped_scale(float max_abs, int qmax) {
  if (max_abs == 0.0f) return 1.0f;
  const float q = static_cast<float>(qmax);
  const float s = max_abs / q;
  return (q * s) / q;
}

namespace detail {

inline void require_finite(const Tensor2D& w) {
  if (!w.all_finite()) fail(ErrorKind::NonFinite, "cannot quantize non-finite values");
}

inline QuantizedTensor quantize_grouped(const Tensor2D& w, QuantScheme scheme) {
  require_finite(w);
  QuantizedTensor q;
  q.rows = w.rows();
  q.cols = w.cols();
  q.scheme = scheme;
  q.values.assign(w.size(), 0);
  const std::size_t width = q.group_width();
  const std::size_t groups = q.groups_per_row();
  q.scales.assign(q.rows * groups, 1.0f);
  const int qmax = scheme.qmax();
  for (std::size_t r = 0; r < q.rows; ++r) {
    const auto row = w.row(r);
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t begin = g * width;
      const std::size_t end = std::min(begin + width, q.cols);
      float max_abs = 0.0f;
      for (std::size_t c = begin; c < end; ++c) max_abs = std::max(max_abs, std::fabs(row[c]));
      const float scale = snapped_scale(max_abs, qmax);
      q.scales[r * groups + g] = scale;
      if (max_abs == 0.0f) continue;
      for (std::size_t c = begin; c < end; ++c) {
        const float v = std::round(row[c] / scale);
        q.values[r * q.cols + c] = static_cast<std::int8_t>(std::clamp(v, -static_cast<float>(qmax), static_cast<float>(qmax)));
      }
    }
  }
  return q;
}

}  // namespace detail

inline QuantizedTensor quantize_per_channel_int8(const Tensor2D& w) {
  return detail::quantize_grouped(w, QuantScheme::int8());
}

inline QuantizedTensor quantize_group_int4(const Tensor2D& w, std::size_t group_size = kDefaultGroupSize) {
  if (group_size == 0) fail(ErrorKind::InvalidArgument, "group_size must be >= 1");
  return detail::quantize_grouped(w, QuantScheme::int4(group_size));
}

inline QuantizedTensor quantize(const Tensor2D& w, QuantScheme scheme) {
  switch (scheme.kind) {
    case QuantKind::Int8PerChannel: return quantize_per_channel_int8(w);
    case QuantKind::Int4GroupWise: return quantize_group_int4(w, scheme.group_size);
    default: fail(ErrorKind::InvalidArgument, "scheme " + scheme.to_string() + " is not a weight storage scheme");
  }
}

inline Tensor2D dequantize(const QuantizedTensor& q) {
  Tensor2D out(q.rows, q.cols);
  for (std::size_t r = 0; r < q.rows; ++r)
    for (std::size_t c = 0; c < q.cols; ++c)
      out(r, c) = static_cast<float>(q.values[r * q.cols + c]) * q.scale_at(r, c);
  return out;
}

// Weight fake-quantization: identity for fp32, dequantize(quantize(w)) otherwise.
inline Tensor2D fake_quantize(const Tensor2D& w, QuantScheme scheme) {
  if (scheme.is_fp32()) return w;
  return dequantize(quantize(w, scheme));
}

// Per-row (per-token) int8 quantize-dequantize with the scale taken from the
// row's runtime max.
inline void dynamic_quant_row(std::span<float> row) {
  float max_abs = 0.0f;
  for (float v : row) max_abs = std::max(max_abs, std::fabs(v));
  if (max_abs == 0.0f) return;
  const float scale = snapped_scale(max_abs, 127);
  for (float& v : row) v = std::clamp(std::round(v / scale), -127.0f, 127.0f) * scale;
}

inline Tensor2D dynamic_quant_activations(const Tensor2D& x) {
  if (!x.all_finite()) fail(ErrorKind::NonFinite, "cannot quantize non-finite activations");
  Tensor2D out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) dynamic_quant_row(out.row(r));
  return out;
}

// Per-layer precision assignment. Canonical text form:
//   T<a>-<b>:<scheme>[,T<c>-<d>:<scheme>...],L:<scheme>[,A:int8]
// Layers are 1-based; consecutive layers with equal schemes are merged into one
// range; "A:int8" switches on dynamic int8 activation quantization.
struct PrecisionPlan {
  std::vector<QuantScheme> layer_schemes;
  QuantScheme head_scheme;
  bool activation_quant = false;

  static PrecisionPlan uniform(std::size_t num_layers, QuantScheme scheme, bool activations = false) {
    return {std::vector<QuantScheme>(num_layers, scheme), scheme, activations};
  }

  std::size_t num_layers() const { return layer_schemes.size(); }

  bool all_fp32() const {
    return head_scheme.is_fp32() &&
           std::all_of(layer_schemes.begin(), layer_schemes.end(), [](const QuantScheme& s) { return s.is_fp32(); });
  }

  std::string to_string() const {
    std::string out;
    std::size_t i = 0;
    while (i < layer_schemes.size()) {
      std::size_t j = i;
      while (j + 1 < layer_schemes.size() && layer_schemes[j + 1] == layer_schemes[i]) ++j;
      out += "T" + std::to_string(i + 1) + "-" + std::to_string(j + 1) + ":" + layer_schemes[i].to_string() + ",";
      i = j + 1;
    }
    out += "L:" + head_scheme.to_string();
    if (activation_quant) out += ",A:int8";
    return out;
  }

  static PrecisionPlan parse(std::string_view text) {
    PrecisionPlan plan;
    bool have_head = false;
    struct Range {
      std::size_t first, last;
      QuantScheme scheme;
    };
    std::vector<Range> ranges;
    std::size_t pos = 0;
    const std::string full(text);
    auto bad = [&](const std::string& why) { fail(ErrorKind::PlanParse, "plan '" + full + "': " + why); };
    auto parse_index = [&](std::string_view s) {
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) bad("bad layer index '" + std::string(s) + "'");
      return v;
    };
    auto parse_scheme = [&](std::string_view s) {
      try {
        return QuantScheme::parse(s);
      } catch (const Error& e) {
        bad(e.what());
      }
      return QuantScheme{};
    };
    if (text.empty()) bad("empty");
    while (pos <= text.size()) {
      const std::size_t comma = std::min(text.find(',', pos), text.size());
      const std::string_view item = text.substr(pos, comma - pos);
      pos = comma + 1;
      const std::size_t colon = item.find(':');
      if (colon == std::string_view::npos) bad("item '" + std::string(item) + "' has no ':'");
      const std::string_view key = item.substr(0, colon);
      const std::string_view value = item.substr(colon + 1);
      if (key == "L") {
        if (have_head) bad("duplicate L entry");
        plan.head_scheme = parse_scheme(value);
        have_head = true;
      } else if (key == "A") {
        if (value != "int8") bad("activation quantization supports only int8");
        plan.activation_quant = true;
      } else if (key.starts_with("T")) {
        const std::string_view span = key.substr(1);
        const std::size_t dash = span.find('-');
        Range r{};
        if (dash == std::string_view::npos) {
          r.first = r.last = parse_index(span);
        } else {
          r.first = parse_index(span.substr(0, dash));
          r.last = parse_index(span.substr(dash + 1));
        }
        if (r.last < r.first) bad("descending range " + std::string(key));
        r.scheme = parse_scheme(value);
        ranges.push_back(r);
      } else {
        bad("unknown key '" + std::string(key) + "'");
      }
      if (comma == text.size()) break;
    }
    if (!have_head) bad("missing L:<scheme> entry");
    std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.first < b.first; });
    std::size_t next = 1;
    for (const auto& r : ranges) {
      if (r.first != next) bad("layer ranges must cover 1..N contiguously without overlap");
      for (std::size_t l = r.first; l <= r.last; ++l) plan.layer_schemes.push_back(r.scheme);
      next = r.last + 1;
    }
    return plan;
  }

  void validate(const DecoderConfig& config) const {
    if (layer_schemes.size() != config.num_layers)
      fail(ErrorKind::InconsistentPlan, "plan covers " + std::to_string(layer_schemes.size()) + " layers, model has " +
                                            std::to_string(config.num_layers));
    auto check = [](const QuantScheme& s) {
      if (s.kind == QuantKind::Int8DynamicActivation)
        fail(ErrorKind::InconsistentPlan, "int8dyn is an activation scheme, not a weight scheme");
      if (s.kind == QuantKind::Int4GroupWise && s.group_size == 0)
        fail(ErrorKind::InconsistentPlan, "int4 group size must be positive");
    };
    for (const auto& s : layer_schemes) check(s);
    check(head_scheme);
  }

  friend bool operator==(const PrecisionPlan&, const PrecisionPlan&) = default;
};

// The six mixed-precision settings of the storage/quality ladder, ordered by
// the number of full-precision tail layers: all int4; all int8; int8 layers
// with an fp32 head; then one, two and three fp32 final layers.
inline std::vector<PrecisionPlan> builtin_table2_plans(std::size_t num_layers) {
  std::vector<PrecisionPlan> plans;
  plans.push_back(PrecisionPlan::uniform(num_layers, QuantScheme::int4()));
  plans.push_back(PrecisionPlan::uniform(num_layers, QuantScheme::int8()));
  for (std::size_t tail = 0; tail <= 3; ++tail) {
    PrecisionPlan p = PrecisionPlan::uniform(num_layers, QuantScheme::int8());
    p.head_scheme = QuantScheme::fp32();
    for (std::size_t l = 0; l < std::min(tail, num_layers); ++l) p.layer_schemes[num_layers - 1 - l] = QuantScheme::fp32();
    plans.push_back(p);
  }
  return plans;
}

namespace detail {

inline std::uint64_t tensor_storage_bytes(const TensorShape& t, QuantScheme scheme, bool include_scales) {
  std::uint64_t bytes = (static_cast<std::uint64_t>(t.count()) * scheme.bits() + 7) / 8;
  if (include_scales && t.is_matrix && !scheme.is_fp32()) {
    QuantizedTensor probe;
    probe.rows = t.rows;
    probe.cols = t.cols;
    probe.scheme = scheme;
    bytes += static_cast<std::uint64_t>(t.rows) * probe.groups_per_row() * sizeof(float);
  }
  return bytes;
}

}  // namespace detail

// Nominal storage of the decoder weights under a plan: every parameter of a
// layer (or of the final norm + head) is charged at that block's bit width.
// Embedding tables are excluded. With include_scales the per-channel / per-group
// float32 scales of each quantized matrix are added.
inline std::uint64_t storage_bytes(const PrecisionPlan& plan, const DecoderConfig& config, bool include_scales = false) {
  plan.validate(config);
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < config.num_layers; ++l)
    for (const auto& t : layer_tensor_shapes(config, l))
      total += detail::tensor_storage_bytes(t, plan.layer_schemes[l], include_scales);
  for (const auto& t : head_tensor_shapes(config)) total += detail::tensor_storage_bytes(t, plan.head_scheme, include_scales);
  return total;
}

inline double to_mb(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }

}  // namespace tmimi
