#pragma once

// Latency harness and precision sweep behind the command-line tool.

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "tmimi/deconv.hpp"
#include "tmimi/frames_io.hpp"
#include "tmimi/metrics.hpp"
#include "tmimi/model.hpp"
#include "tmimi/streaming.hpp"

namespace tmimi {

enum class HeadKind { Transformer, Deconv };

// Nearest-rank percentile of an unsorted sample, p in (0, 100].
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) fail(ErrorKind::InvalidArgument, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

// Baseline decoder: the first `trunk_layers` transformer layers at full
// precision followed by the transposed-convolution head.
inline constexpr std::size_t kBaselineTrunkLayers = 8;

inline DecoderConfig baseline_trunk_config(const DecoderConfig& c) {
  DecoderConfig t = c;
  t.num_layers = std::min(c.num_layers, kBaselineTrunkLayers);
  return t;
}

inline std::uint64_t baseline_flops_per_frame(const DecoderConfig& c, const DeconvConfig& d) {
  const DecoderConfig t = baseline_trunk_config(c);
  const std::uint64_t linear_head = t.model_dim * t.head_hidden_dim + t.head_hidden_dim * t.samples_per_frame;
  return flops_per_frame(t) - linear_head + deconv_flops_per_frame(d);
}

inline std::uint64_t baseline_param_count(const DecoderConfig& c, const DeconvConfig& d) {
  const DecoderConfig t = baseline_trunk_config(c);
  return t.num_layers * layer_param_count(t) + 2 * t.model_dim + deconv_param_count(d);
}

struct BenchOptions {
  std::size_t chunks = 500;
  std::size_t warmup = 20;
  HeadKind head = HeadKind::Transformer;
  std::size_t context_frames = 5;  // deconv baseline only
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string head;
  std::string plan;
  DecoderConfig config;
  std::size_t chunks = 0;
  std::size_t warmup = 0;
  std::size_t context_frames = 0;
  double mean_ms = 0, p50_ms = 0, p95_ms = 0, p99_ms = 0, min_ms = 0, max_ms = 0;
  double chunk_ms = 0;  // audio duration of one chunk
  double real_time_factor = 0;
  std::uint64_t flops_per_frame = 0;
  std::uint64_t params = 0;
  std::uint64_t storage_bytes = 0;
};

// Steps `warmup + chunks` random frames through a stream and times each step()
// call with a steady clock; warmup steps are discarded.
inline BenchReport run_stream_bench(const DecoderWeights& weights, const PrecisionPlan& plan, const BenchOptions& opt) {
  if (opt.chunks < 1) fail(ErrorKind::InvalidArgument, "need at least one measured chunk");
  const DecoderConfig& c = weights.config;
  BenchReport report;
  report.config = c;
  report.chunks = opt.chunks;
  report.warmup = opt.warmup;
  report.chunk_ms = c.frame_ms();

  std::function<void(const FrameInput&)> step;
  std::optional<StreamState> stream;
  std::optional<DeconvWeights> deconv_weights;
  std::optional<DeconvStream> deconv;
  std::vector<float> sink;
  if (opt.head == HeadKind::Transformer) {
    report.head = "transformer";
    report.plan = plan.to_string();
    stream.emplace(new_stream(weights, plan));
    report.flops_per_frame = flops_per_frame(c);
    report.params = param_count(c);
    report.storage_bytes = storage_bytes(plan, c, false);
    step = [&](const FrameInput& f) { sink = stream->step(f); };
  } else {
    report.head = "deconv";
    const DeconvConfig dc = DeconvConfig::reference_for(c, opt.context_frames);
    const DecoderConfig trunk = baseline_trunk_config(c);
    const PrecisionPlan trunk_plan = PrecisionPlan::uniform(trunk.num_layers, QuantScheme::fp32());
    report.plan = trunk_plan.to_string();
    report.context_frames = opt.context_frames;
    stream.emplace(new_stream(truncate_layers(weights, trunk.num_layers), trunk_plan));
    deconv_weights.emplace(deconv_init_random(dc, opt.seed ^ 0xDECDECull));
    deconv.emplace(*deconv_weights);
    report.flops_per_frame = baseline_flops_per_frame(c, dc);
    report.params = baseline_param_count(c, dc);
    report.storage_bytes = report.params * 4;
    step = [&](const FrameInput& f) {
      const Tensor2D h = stream->step_hidden(f);
      sink = deconv->step(h.row(0));
    };
  }

  Rng rng(opt.seed);
  for (std::size_t i = 0; i < opt.warmup; ++i) step(random_token_frame(c, rng));
  std::vector<double> ms;
  ms.reserve(opt.chunks);
  for (std::size_t i = 0; i < opt.chunks; ++i) {
    const FrameInput frame = random_token_frame(c, rng);
    const auto t0 = std::chrono::steady_clock::now();
    step(frame);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  report.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  report.p50_ms = percentile(ms, 50);
  report.p95_ms = percentile(ms, 95);
  report.p99_ms = percentile(ms, 99);
  report.min_ms = *std::min_element(ms.begin(), ms.end());
  report.max_ms = *std::max_element(ms.begin(), ms.end());
  report.real_time_factor = report.mean_ms / report.chunk_ms;
  return report;
}

struct SweepRow {
  std::string plan;
  double storage_mb = 0;              // decoder weights, scales excluded
  double storage_mb_with_scales = 0;
  double si_sdr_db = 0;               // against the fp32 output of the same weights
  std::optional<double> mel_l1;       // absent when the output is shorter than the largest FFT
};

struct SweepReport {
  std::size_t frames = 0;
  std::vector<SweepRow> rows;
};

// Decodes the frames under every plan and compares each output with the
// all-fp32 output of the same weights.
inline SweepReport run_quant_sweep(const DecoderWeights& weights, const std::vector<PrecisionPlan>& plans,
                                   const std::vector<FrameInput>& frames, const MelConfig& mel = {}) {
  const DecoderConfig& c = weights.config;
  for (const auto& p : plans) {
    try {
      p.validate(c);
    } catch (const Error& e) {
      fail(ErrorKind::InconsistentPlan, "plan '" + p.to_string() + "': " + e.what());
    }
  }
  const auto reference = forward_offline(frames, weights, PrecisionPlan::uniform(c.num_layers, QuantScheme::fp32()));
  MelConfig mc = mel;
  mc.sample_rate = c.sample_rate;
  SweepReport report;
  report.frames = frames.size();
  for (const auto& p : plans) {
    const auto out = forward_offline(frames, weights, p);
    SweepRow row;
    row.plan = p.to_string();
    row.storage_mb = to_mb(storage_bytes(p, c, false));
    row.storage_mb_with_scales = to_mb(storage_bytes(p, c, true));
    row.si_sdr_db = si_sdr(reference, out);
    if (out.size() >= mc.max_fft()) row.mel_l1 = multiscale_mel_l1(reference, out, mc);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace tmimi
