#pragma once

// TMFR frame files: "TMFR", u32 frame count, u32 variant, then the frames,
// all little-endian. Variant 0 stores num_codebooks u16 token ids per frame,
// variant 1 stores model_dim f32 latents per frame. The widths come from the
// decoder config, so reading needs the config the frames are meant for.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "tmimi/bytes.hpp"
#include "tmimi/model.hpp"

namespace tmimi {

inline constexpr char kFramesMagic[4] = {'T', 'M', 'F', 'R'};

enum class FrameVariant : std::uint32_t { Tokens = 0, Latents = 1 };

inline std::vector<std::uint8_t> encode_frames(const std::vector<FrameInput>& frames, const DecoderConfig& config) {
  const bool tokens = frames.empty() || frames.front().is_tokens();
  ByteWriter w;
  w.bytes(std::string_view(kFramesMagic, 4));
  w.u32(static_cast<std::uint32_t>(frames.size()));
  w.u32(static_cast<std::uint32_t>(tokens ? FrameVariant::Tokens : FrameVariant::Latents));
  for (const auto& f : frames) {
    if (f.is_tokens() != tokens) fail(ErrorKind::InvalidArgument, "frames mix tokens and latents");
    validate_frame(f, config);
    if (tokens) {
      for (auto id : f.token_ids()) w.u16(static_cast<std::uint16_t>(id));
    } else {
      for (float v : f.latent_values()) w.f32(v);
    }
  }
  return w.take();
}

inline std::vector<FrameInput> decode_frames(const std::vector<std::uint8_t>& data, const DecoderConfig& config) {
  if (data.size() < 4) fail(ErrorKind::Truncated, "frames file shorter than its magic");
  if (std::memcmp(data.data(), kFramesMagic, 4) != 0) fail(ErrorKind::BadMagic, "not a TMFR frames file");
  ByteReader r(data.data() + 4, data.size() - 4);
  const std::uint32_t count = r.u32();
  const std::uint32_t variant = r.u32();
  if (variant > 1) fail(ErrorKind::Format, "unknown frame variant " + std::to_string(variant));
  const std::size_t per_frame = variant == 0 ? config.num_codebooks * 2 : config.model_dim * 4;
  if (r.remaining() != static_cast<std::uint64_t>(count) * per_frame)
    fail(r.remaining() < static_cast<std::uint64_t>(count) * per_frame ? ErrorKind::Truncated : ErrorKind::Format,
         "frames payload is " + std::to_string(r.remaining()) + " bytes, expected " +
             std::to_string(static_cast<std::uint64_t>(count) * per_frame));
  std::vector<FrameInput> frames;
  frames.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (variant == 0) {
      std::vector<std::uint32_t> ids(config.num_codebooks);
      for (auto& id : ids) id = r.u16();
      frames.push_back(FrameInput::tokens(std::move(ids)));
    } else {
      std::vector<float> v(config.model_dim);
      for (auto& x : v) x = r.f32();
      frames.push_back(FrameInput::latent(std::move(v)));
    }
    try {
      validate_frame(frames.back(), config);
    } catch (const Error& e) {
      fail(ErrorKind::Format, "frame " + std::to_string(i) + ": " + e.what());
    }
  }
  return frames;
}

inline void write_frames(const std::string& path, const std::vector<FrameInput>& frames, const DecoderConfig& config) {
  write_file(path, encode_frames(frames, config));
}

inline std::vector<FrameInput> read_frames(const std::string& path, const DecoderConfig& config) {
  return decode_frames(read_file(path), config);
}

}  // namespace tmimi
