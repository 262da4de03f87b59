#include <gtest/gtest.h>

#include <cmath>

#include "reference_decoder.hpp"
#include "tmimi/model.hpp"
#include "tmimi/weight_store.hpp"

using namespace tmimi;
using tmimi::testing::reference_forward;
using tmimi::testing::small_config;
using tmimi::testing::tiny_config;

namespace {

// Gains and shifts away from 1 / 0 so the oracle sees them.
void randomize_norms(DecoderWeights& w, Rng& rng) {
  visit_params(w, [&](const TensorShape& s, Param& p) {
    if (s.is_matrix || s.name.starts_with("embed.") || s.name == "head.bias1") return;
    for (float& v : std::get<Tensor2D>(p).data())
      v = s.name.ends_with(".gamma") ? 0.5f + rng.uniform() : rng.uniform_symmetric(0.2f);
  });
}

double max_abs(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

void expect_close(const std::vector<float>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  const double scale = std::max(1.0, max_abs(want));
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], tol * scale) << "sample " << i;
}

std::vector<float> frame_slice(const std::vector<float>& out, std::size_t t, std::size_t spf) {
  return {out.begin() + static_cast<std::ptrdiff_t>(t * spf), out.begin() + static_cast<std::ptrdiff_t>((t + 1) * spf)};
}

}  // namespace

TEST(Embed, SumsCodebookRows) {
  DecoderConfig c = tiny_config();
  DecoderWeights w = zero_weights(c);
  auto& e0 = std::get<Tensor2D>(w.embeddings[0]);
  auto& e1 = std::get<Tensor2D>(w.embeddings[1]);
  for (std::size_t d = 0; d < c.model_dim; ++d) {
    e0(3, d) = static_cast<float>(d);
    e1(5, d) = 0.5f;
    e1(3, d) = 100.0f;
  }
  const auto x = embed_frame(FrameInput::tokens({3, 5}), w);
  for (std::size_t d = 0; d < c.model_dim; ++d) EXPECT_EQ(x[d], static_cast<float>(d) + 0.5f);
}

TEST(Embed, LatentPassesThrough) {
  const DecoderConfig c = tiny_config();
  Rng rng(1);
  const auto f = random_latent_frame(c, rng);
  EXPECT_EQ(embed_frame(f, init_random(c, 1)), f.latent_values());
}

TEST(Embed, RejectsMalformedFrames) {
  const DecoderConfig c = tiny_config();
  const auto w = zero_weights(c);
  auto kind_of = [&](const FrameInput& f) {
    try {
      embed_frame(f, w);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;  // sentinel: nothing thrown
  };
  EXPECT_EQ(kind_of(FrameInput::tokens({1})), ErrorKind::Shape);
  EXPECT_EQ(kind_of(FrameInput::tokens({1, 16})), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of(FrameInput::latent(std::vector<float>(15))), ErrorKind::Shape);
  std::vector<float> bad(16, 0.0f);
  bad[4] = std::nanf("");
  EXPECT_EQ(kind_of(FrameInput::latent(bad)), ErrorKind::NonFinite);
}

TEST(Forward, DefaultConfigFrameYields1920Samples) {
  const DecoderConfig c;
  const auto w = init_random(c, 7);
  const auto frames = random_frames(c, 1, 3);
  const auto out = forward_offline(frames, w);
  ASSERT_EQ(out.size(), 1920u);
  for (float v : out) ASSERT_TRUE(std::isfinite(v));
}

TEST(Forward, OutputLengthIsFramesTimesSamplesPerFrame) {
  const DecoderConfig c = tiny_config();
  const auto w = init_random(c, 2);
  for (std::size_t n : {1u, 2u, 7u}) EXPECT_EQ(forward_offline(random_frames(c, n, n), w).size(), n * 40);
}

TEST(Forward, ZeroWeightsGiveSilence) {
  const DecoderConfig c = tiny_config();
  const auto out = forward_offline(random_frames(c, 5, 1), zero_weights(c));
  for (float v : out) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, EmptyInputRejected) {
  const DecoderConfig c = tiny_config();
  EXPECT_THROW(forward_offline(std::vector<FrameInput>{}, zero_weights(c)), Error);
}

TEST(Forward, MatchesDoublePrecisionOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t window = 1 + rng.below(6);
    const DecoderConfig c = small_config(rng, window);
    DecoderWeights w = init_random(c, 100 + trial);
    randomize_norms(w, rng);
    const auto frames = random_frames(c, 1 + rng.below(10), trial);
    expect_close(forward_offline(frames, w), reference_forward(frames, w), 1e-5);
  }
}

TEST(Forward, LatentInputMatchesOracle) {
  const DecoderConfig c = tiny_config();
  DecoderWeights w = init_random(c, 5);
  Rng rng(5);
  std::vector<FrameInput> frames;
  for (int i = 0; i < 6; ++i) frames.push_back(random_latent_frame(c, rng));
  expect_close(forward_offline(frames, w), reference_forward(frames, w), 1e-5);
}

TEST(Forward, QuantizedPlanMatchesOracleOnFakeQuantizedWeights) {
  const DecoderConfig c = tiny_config();
  const auto w = init_random(c, 9);
  const auto frames = random_frames(c, 6, 9);
  const auto plan = PrecisionPlan::parse("T1:int4g8,T2:int8,L:int8");
  expect_close(forward_offline(frames, w, plan), reference_forward(frames, w, plan), 1e-5);
}

TEST(Forward, Fp32PlanIsBitIdenticalToUnquantized) {
  const DecoderConfig c = tiny_config();
  const auto w = init_random(c, 4);
  const auto frames = random_frames(c, 9, 4);
  EXPECT_EQ(forward_offline(frames, w, PrecisionPlan::uniform(2, QuantScheme::fp32())), forward_offline(frames, w));
}

TEST(Forward, PlanMustMatchLayerCount) {
  const DecoderConfig c = tiny_config();
  try {
    forward_offline(random_frames(c, 1, 0), zero_weights(c), PrecisionPlan::uniform(3, QuantScheme::int8()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InconsistentPlan);
  }
}

TEST(Forward, CausalPerturbationLeavesEarlierFramesUntouched) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const DecoderConfig c = small_config(rng, 1 + rng.below(8));
    const auto w = init_random(c, trial);
    auto frames = random_frames(c, 10, trial);
    const auto base = forward_offline(frames, w);
    const std::size_t t = rng.below(10);
    frames[t] = random_token_frame(c, rng);
    const auto pert = forward_offline(frames, w);
    const std::size_t spf = c.samples_per_frame;
    for (std::size_t u = 0; u < t; ++u) ASSERT_EQ(frame_slice(base, u, spf), frame_slice(pert, u, spf));
  }
}

// With one layer a frame only reaches the next W - 1 frames.
TEST(Forward, SingleLayerWindowBoundsInfluence) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    DecoderConfig c = small_config(rng, 1 + rng.below(5));
    c.num_layers = 1;
    const auto w = init_random(c, trial);
    auto frames = random_frames(c, 14, trial);
    const auto base = forward_offline(frames, w);
    const std::size_t t = rng.below(6);
    frames[t] = FrameInput::latent(std::vector<float>(c.model_dim, 3.0f));
    const auto pert = forward_offline(frames, w);
    const std::size_t spf = c.samples_per_frame;
    for (std::size_t u = t + c.attention_window; u < 14; ++u)
      ASSERT_EQ(frame_slice(base, u, spf), frame_slice(pert, u, spf)) << "frame " << u;
    EXPECT_NE(frame_slice(base, t, spf), frame_slice(pert, t, spf));
  }
}

// Stacked layers widen the receptive field to L (W - 1) + 1 frames.
TEST(Forward, StackedLayersBoundInfluenceByReceptiveField) {
  DecoderConfig c = tiny_config();
  c.num_layers = 3;
  c.attention_window = 3;
  const auto w = init_random(c, 3);
  auto frames = random_frames(c, 16, 3);
  const auto base = forward_offline(frames, w);
  frames[2] = FrameInput::latent(std::vector<float>(c.model_dim, 2.0f));
  const auto pert = forward_offline(frames, w);
  const std::size_t reach = c.num_layers * (c.attention_window - 1);
  for (std::size_t u = 0; u < 16; ++u) {
    const bool same = frame_slice(base, u, 40) == frame_slice(pert, u, 40);
    if (u < 2 || u > 2 + reach) EXPECT_TRUE(same) << "frame " << u;
    else EXPECT_FALSE(same) << "frame " << u;
  }
}

TEST(Params, PresetCounts) {
  EXPECT_EQ(param_count(preset("t-mimi-12x2048")), 40810720u);
  EXPECT_EQ(param_count(preset("t-mimi-8")), 28219616u);
  EXPECT_EQ(param_count(preset("t-mimi-16x2048")), 53401824u);
  EXPECT_EQ(param_count(preset("t-mimi-12x3072")), 42328912u);
  const double published[] = {40.8, 28.2, 42.3, 53.4};
  const auto names = preset_names();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(param_count(preset(names[i])) / 1e6, published[i], 0.03 * published[i]);
  EXPECT_THROW(preset("t-mimi-99"), Error);
}

TEST(Params, FullPrecisionStorageIsFourBytesPerParameter) {
  for (const auto& name : preset_names()) {
    const auto c = preset(name);
    EXPECT_EQ(storage_bytes(PrecisionPlan::uniform(c.num_layers, QuantScheme::fp32()), c), 4 * param_count(c)) << name;
  }
  const auto c = preset("t-mimi-12x3072");
  EXPECT_NEAR(to_mb(storage_bytes(PrecisionPlan::uniform(12, QuantScheme::fp32()), c)), 169.2, 0.5);
  EXPECT_NEAR(to_mb(storage_bytes(PrecisionPlan::uniform(12, QuantScheme::fp32()), DecoderConfig{})), 163.2, 0.1);
}

TEST(Params, HandSummedSingleLayer) {
  DecoderConfig c;
  c.num_layers = 1;
  c.model_dim = 8;
  c.ffn_dim = 16;
  c.num_heads = 2;
  c.head_hidden_dim = 6;
  c.samples_per_frame = 10;
  c.sample_rate = 125;
  // attn 4*64, ffn 2*128, norms 4*8; final norm 16, head 48 + 6 + 60
  EXPECT_EQ(param_count(c), 256u + 256u + 32u + 16u + 48u + 6u + 60u);
  std::size_t tensors = 0;
  const auto zeros = zero_weights(c);
  visit_params(zeros, [&](const TensorShape& s, const Param& p) {
    EXPECT_EQ(param_rows(p) * param_cols(p), s.count());
    if (!s.name.starts_with("embed.")) tensors += s.count();
  });
  EXPECT_EQ(tensors, param_count(c));
}

TEST(Flops, ClosedFormForDefaultConfig) {
  const DecoderConfig c;
  const std::uint64_t per_layer = 4ull * 512 * 512 + 2ull * 512 * 2048 + 2ull * 250 * 512;
  EXPECT_EQ(flops_per_frame(c), 12 * per_layer + 512ull * 1248 + 1248ull * 1920);
  EXPECT_EQ(flops_per_frame(c, 1), 12 * (per_layer - 2ull * 249 * 512) + 512ull * 1248 + 1248ull * 1920);
}

TEST(Flops, InstrumentedKernelsAgreeWithFormula) {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const DecoderConfig c = small_config(rng, 1 + rng.below(5));
    const auto w = init_random(c, trial);
    const std::size_t n = 1 + rng.below(8);
    const auto frames = random_frames(c, n, trial);
    const PreparedDecoder model(w, PrecisionPlan::uniform(c.num_layers, QuantScheme::fp32()));
    MacCounter counter;
    model.forward(frames);
    std::uint64_t want = 0;
    for (std::size_t t = 0; t < n; ++t) want += flops_per_frame(c, t + 1);
    EXPECT_EQ(counter.count(), want);
  }
}

TEST(Weights, TruncateKeepsPrefix) {
  const auto w = init_random(tiny_config(), 1);
  const auto t = truncate_layers(w, 1);
  EXPECT_EQ(t.config.num_layers, 1u);
  EXPECT_EQ(t.layers[0], w.layers[0]);
  EXPECT_EQ(t.head, w.head);
  EXPECT_THROW(truncate_layers(w, 3), Error);
}

TEST(Weights, CheckShapesNamesTheTensor) {
  auto w = zero_weights(tiny_config());
  w.layers[1].attn_k = Tensor2D(3, 3);
  try {
    check_shapes(w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
    EXPECT_NE(std::string(e.what()).find("layers.1.attn.k"), std::string::npos);
  }
}
