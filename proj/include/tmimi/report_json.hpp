#pragma once

// JSON views of configs and reports (schemas in docs/schemas/).

#include <json.hpp>

#include <string>

#include "tmimi/bench.hpp"
#include "tmimi/config.hpp"

namespace tmimi {

inline nlohmann::json to_json(const DecoderConfig& c) {
  return {
      {"num_layers", c.num_layers},
      {"model_dim", c.model_dim},
      {"ffn_dim", c.ffn_dim},
      {"num_heads", c.num_heads},
      {"attention_window", c.attention_window},
      {"head_hidden_dim", c.head_hidden_dim},
      {"samples_per_frame", c.samples_per_frame},
      {"sample_rate", c.sample_rate},
      {"frame_rate", c.frame_rate},
      {"num_codebooks", c.num_codebooks},
      {"codebook_size", c.codebook_size},
      {"activation", "gelu_tanh"},
  };
}

// Missing keys keep their defaults.
inline DecoderConfig config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get("num_layers", c.num_layers);
    get("model_dim", c.model_dim);
    get("ffn_dim", c.ffn_dim);
    get("num_heads", c.num_heads);
    get("attention_window", c.attention_window);
    get("head_hidden_dim", c.head_hidden_dim);
    get("samples_per_frame", c.samples_per_frame);
    get("sample_rate", c.sample_rate);
    get("frame_rate", c.frame_rate);
    get("num_codebooks", c.num_codebooks);
    get("codebook_size", c.codebook_size);
    if (j.contains("activation") && j.at("activation") != "gelu_tanh")
      fail(ErrorKind::InvalidArgument, "only gelu_tanh activation is supported");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("config json: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json j = {
      {"head", r.head},
      {"plan", r.plan},
      {"config", to_json(r.config)},
      {"chunks", r.chunks},
      {"warmup", r.warmup},
      {"latency_ms", {{"mean", r.mean_ms}, {"p50", r.p50_ms}, {"p95", r.p95_ms}, {"p99", r.p99_ms},
                      {"min", r.min_ms}, {"max", r.max_ms}}},
      {"chunk_ms", r.chunk_ms},
      {"real_time_factor", r.real_time_factor},
      {"flops_per_frame", r.flops_per_frame},
      {"params", r.params},
      {"storage_bytes", r.storage_bytes},
  };
  if (r.head == "deconv") j["context_frames"] = r.context_frames;
  return j;
}

inline nlohmann::json to_json(const SweepReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({
        {"plan", row.plan},
        {"storage_mb", row.storage_mb},
        {"storage_mb_with_scales", row.storage_mb_with_scales},
        {"si_sdr_db", row.si_sdr_db},
        {"mel_l1", row.mel_l1 ? nlohmann::json(*row.mel_l1) : nlohmann::json(nullptr)},
    });
  }
  return {{"frames", r.frames}, {"rows", rows}};
}

}  // namespace tmimi
