#pragma once

// Mono 16-bit PCM RIFF/WAVE writer. Samples are clamped to [-1, 1], scaled by
// 32767 and rounded to nearest (ties away from zero).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "tmimi/bytes.hpp"

namespace tmimi {

inline std::int16_t to_pcm16(float x) {
  const float clamped = std::clamp(x, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::round(clamped * 32767.0f));
}

inline std::vector<std::uint8_t> encode_wav(std::span<const float> samples, std::uint32_t sample_rate) {
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  ByteWriter w;
  w.bytes("RIFF");
  w.u32(36 + data_bytes);
  w.bytes("WAVE");
  w.bytes("fmt ");
  w.u32(16);
  w.u16(1);  // PCM
  w.u16(1);  // mono
  w.u32(sample_rate);
  w.u32(sample_rate * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data");
  w.u32(data_bytes);
  for (float s : samples) w.u16(static_cast<std::uint16_t>(to_pcm16(s)));
  return w.take();
}

inline void write_wav(const std::string& path, std::span<const float> samples, std::uint32_t sample_rate) {
  write_file(path, encode_wav(samples, sample_rate));
}

struct WavData {
  std::uint32_t sample_rate = 0;
  std::vector<std::int16_t> samples;
};

// Reads the files encode_wav produces (canonical 44-byte header).
inline WavData decode_wav(const std::vector<std::uint8_t>& data) {
  ByteReader r(data.data(), data.size());
  if (r.string(4) != "RIFF") fail(ErrorKind::BadMagic, "not a RIFF file");
  r.u32();
  if (r.string(4) != "WAVE" || r.string(4) != "fmt ") fail(ErrorKind::Format, "not a WAVE file");
  if (r.u32() != 16 || r.u16() != 1 || r.u16() != 1) fail(ErrorKind::Format, "expected mono PCM");
  WavData out;
  out.sample_rate = r.u32();
  r.u32();
  r.u16();
  if (r.u16() != 16) fail(ErrorKind::Format, "expected 16-bit samples");
  if (r.string(4) != "data") fail(ErrorKind::Format, "missing data chunk");
  const std::uint32_t n = r.u32();
  out.samples.resize(n / 2);
  for (auto& s : out.samples) s = static_cast<std::int16_t>(r.u16());
  return out;
}

}  // namespace tmimi
