#include <gtest/gtest.h>

#include "reference_decoder.hpp"
#include "tmimi/bench.hpp"
#include "tmimi/report_json.hpp"
#include "tmimi/weight_store.hpp"

using namespace tmimi;
using tmimi::testing::tiny_config;

TEST(Percentile, NearestRank) {
  const std::vector<double> v{15, 20, 35, 40, 50};
  EXPECT_EQ(percentile(v, 5), 15);
  EXPECT_EQ(percentile(v, 30), 20);
  EXPECT_EQ(percentile(v, 40), 20);
  EXPECT_EQ(percentile(v, 50), 35);
  EXPECT_EQ(percentile(v, 100), 50);
  EXPECT_EQ(percentile({7}, 99), 7);
  EXPECT_THROW(percentile({}, 50), Error);
}

TEST(Percentile, OrderIndependent) {
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(percentile(v, 95), 95);
  EXPECT_EQ(percentile(v, 99), 99);
}

TEST(StreamBench, TransformerReport) {
  const auto c = tiny_config();
  const auto w = init_random(c, 1);
  BenchOptions opt;
  opt.chunks = 30;
  opt.warmup = 3;
  const auto r = run_stream_bench(w, PrecisionPlan::uniform(2, QuantScheme::int8()), opt);
  EXPECT_EQ(r.head, "transformer");
  EXPECT_EQ(r.plan, "T1-2:int8,L:int8");
  EXPECT_EQ(r.chunks, 30u);
  EXPECT_DOUBLE_EQ(r.chunk_ms, 80.0);
  EXPECT_LE(r.min_ms, r.p50_ms);
  EXPECT_LE(r.p50_ms, r.p95_ms);
  EXPECT_LE(r.p95_ms, r.p99_ms);
  EXPECT_LE(r.p99_ms, r.max_ms);
  EXPECT_GE(r.mean_ms, r.min_ms);
  EXPECT_DOUBLE_EQ(r.real_time_factor, r.mean_ms / 80.0);
  EXPECT_EQ(r.flops_per_frame, flops_per_frame(c));
  EXPECT_EQ(r.params, param_count(c));
}

TEST(StreamBench, DeconvBaselineReport) {
  const auto c = tiny_config();
  BenchOptions opt;
  opt.chunks = 10;
  opt.warmup = 0;
  opt.head = HeadKind::Deconv;
  opt.context_frames = 2;
  const auto r = run_stream_bench(init_random(c, 2), PrecisionPlan::uniform(2, QuantScheme::fp32()), opt);
  EXPECT_EQ(r.head, "deconv");
  EXPECT_EQ(r.context_frames, 2u);
  const auto dc = DeconvConfig::reference_for(c, 2);
  EXPECT_EQ(r.flops_per_frame, baseline_flops_per_frame(c, dc));
  EXPECT_EQ(to_json(r)["context_frames"], 2);
}

TEST(StreamBench, ZeroChunksRejected) {
  BenchOptions opt;
  opt.chunks = 0;
  EXPECT_THROW(run_stream_bench(init_random(tiny_config(), 1), PrecisionPlan::uniform(2, QuantScheme::fp32()), opt),
               Error);
}

TEST(Baseline, DefaultCostsAboutFifteenTimesTheTransformer) {
  const DecoderConfig c;
  const auto dc = DeconvConfig::reference_for(c, 5);
  const double ratio = static_cast<double>(baseline_flops_per_frame(c, dc)) / static_cast<double>(flops_per_frame(c));
  EXPECT_GT(ratio, 5.0);
  const auto dc2 = DeconvConfig::reference_for(c, 2);
  EXPECT_LT(baseline_flops_per_frame(c, dc2), baseline_flops_per_frame(c, dc));
}

TEST(QuantSweep, RowsFollowPlansAndFp32IsPerfect) {
  const auto c = tiny_config();
  const auto w = init_random(c, 3);
  const auto frames = random_frames(c, 60, 3);  // 2400 samples, enough for a 2048-point FFT
  std::vector<PrecisionPlan> plans{PrecisionPlan::uniform(2, QuantScheme::fp32()),
                                   PrecisionPlan::uniform(2, QuantScheme::int8()),
                                   PrecisionPlan::uniform(2, QuantScheme::int4(8))};
  const auto r = run_quant_sweep(w, plans, frames);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.frames, 60u);
  EXPECT_EQ(r.rows[0].si_sdr_db, 100.0);
  EXPECT_EQ(r.rows[0].mel_l1, 0.0);
  EXPECT_GT(r.rows[1].si_sdr_db, r.rows[2].si_sdr_db);
  EXPECT_GT(r.rows[0].storage_mb, r.rows[1].storage_mb);
  EXPECT_GT(r.rows[1].storage_mb, r.rows[2].storage_mb);
  EXPECT_GE(r.rows[2].storage_mb_with_scales, r.rows[2].storage_mb);
  const auto j = to_json(r);
  EXPECT_EQ(j["rows"][1]["plan"], "T1-2:int8,L:int8");
}

TEST(QuantSweep, ShortInputOmitsMelDistance) {
  const auto c = tiny_config();
  const auto r = run_quant_sweep(init_random(c, 4), {PrecisionPlan::uniform(2, QuantScheme::int8())},
                                 random_frames(c, 3, 4));
  EXPECT_FALSE(r.rows[0].mel_l1.has_value());
  EXPECT_TRUE(to_json(r)["rows"][0]["mel_l1"].is_null());
}

TEST(QuantSweep, PlanForOtherDepthRejected) {
  const auto c = tiny_config();
  try {
    run_quant_sweep(init_random(c, 5), {PrecisionPlan::uniform(12, QuantScheme::int8())}, random_frames(c, 2, 5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InconsistentPlan);
  }
}

TEST(ConfigJson, RoundTrip) {
  for (const auto& name : preset_names()) EXPECT_EQ(config_from_json(to_json(preset(name))), preset(name));
  EXPECT_EQ(config_from_json(to_json(tiny_config())), tiny_config());
  EXPECT_THROW(config_from_json(nlohmann::json{{"model_dim", "wide"}}), Error);
  EXPECT_THROW(config_from_json(nlohmann::json{{"num_heads", 7}}), Error);
}
