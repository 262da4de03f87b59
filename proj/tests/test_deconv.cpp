#include <gtest/gtest.h>

#include "tmimi/deconv.hpp"

using namespace tmimi;

namespace {

DeconvConfig small_deconv(std::size_t context) {
  DeconvConfig c;
  c.in_channels = 6;
  c.pre_kernel = 3;
  c.channels = {5, 3, 1};
  c.strides = {2, 3, 2};
  c.kernels = {4, 5, 3};
  c.context_frames = context;
  return c;
}

// Transposed convolution as zero-stuffing followed by an ordinary full
// convolution: u[n*s] = x[n], y[m] = b + sum_k W_k^T u[m - k].
Tensor2D zero_stuffed(const Tensor2D& x, const Tensor2D& w, const std::vector<float>& b, std::size_t s, std::size_t K) {
  const std::size_t cin = x.cols(), cout = w.cols(), len = x.rows() * s;
  std::vector<std::vector<double>> u(len, std::vector<double>(cin, 0.0));
  for (std::size_t n = 0; n < x.rows(); ++n)
    for (std::size_t i = 0; i < cin; ++i) u[n * s][i] = x(n, i);
  Tensor2D y(len, cout);
  for (std::size_t m = 0; m < len; ++m)
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = b[o];
      for (std::size_t k = 0; k < K && k <= m; ++k)
        for (std::size_t i = 0; i < cin; ++i) acc += static_cast<double>(w(k * cin + i, o)) * u[m - k][i];
      y(m, o) = static_cast<float>(acc);
    }
  return y;
}

}  // namespace

TEST(ConvTranspose, SingleTapIdentityCopies) {
  Rng rng(1);
  const auto x = random_tensor(5, 3, rng);
  EXPECT_EQ(conv_transpose_1d(x, Tensor2D::identity(3), std::vector<float>(3, 0.0f), 1, 1), x);
}

TEST(ConvTranspose, StrideWithoutOverlapInterleavesTaps) {
  // kernel == stride: each input sample writes its own block of outputs
  const auto x = Tensor2D::from_rows({{1}, {2}});
  const auto w = Tensor2D::from_rows({{10}, {20}, {30}});
  const auto y = conv_transpose_1d(x, w, std::vector<float>{0.5f}, 3, 3);
  EXPECT_EQ(y.values(), (std::vector<float>{10.5f, 20.5f, 30.5f, 20.5f, 40.5f, 60.5f}));
}

TEST(ConvTranspose, MatchesZeroStuffingOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(6), cin = 1 + rng.below(5), cout = 1 + rng.below(4);
    const std::size_t s = 1 + rng.below(5), K = 1 + rng.below(3 * s);
    const auto x = random_tensor(n, cin, rng);
    const auto w = random_tensor(K * cin, cout, rng);
    std::vector<float> b(cout);
    for (auto& v : b) v = rng.uniform_symmetric(1.0f);
    const auto got = conv_transpose_1d(x, w, b, s, K);
    const auto want = zero_stuffed(x, w, b, s, K);
    ASSERT_LE(max_abs_diff(got.data(), want.data()), 1e-6) << "trial " << trial;
  }
}

TEST(ConvTranspose, ShapeChecked) {
  EXPECT_THROW(conv_transpose_1d(Tensor2D(2, 3), Tensor2D(5, 1), std::vector<float>{0}, 2, 2), Error);
}

TEST(Deconv, ReferenceStackShape) {
  const auto c = DeconvConfig::reference_for(DecoderConfig{});
  EXPECT_EQ(c.samples_per_frame(), 1920u);
  EXPECT_NEAR(deconv_param_count(c) / 1e6, 15.9, 0.1);
  DecoderConfig small;
  small.samples_per_frame = 40;
  small.sample_rate = 500;
  EXPECT_EQ(DeconvConfig::reference_for(small).samples_per_frame(), 40u);
}

TEST(Deconv, OutputLength) {
  const auto w = deconv_init_random(small_deconv(3), 1);
  Rng rng(3);
  EXPECT_EQ(deconv_forward(random_tensor(7, 6, rng), w).size(), 7u * 12);
  EXPECT_EQ(deconv_stack(random_tensor(2, 6, rng), w).size(), 24u);
}

// Frame t sees frame t - 2 through the 3-tap frame-rate convolution only when
// the context holds it: a perturbation of frame 0 reaches frame 2 with a
// context of 5 but not with a context of 2.
TEST(Deconv, ContextWindowLimitsInfluence) {
  for (std::size_t context : {5u, 2u}) {
    const auto w = deconv_init_random(small_deconv(context), 4);
    Rng rng(4);
    auto x = random_tensor(10, 6, rng);
    const auto base = deconv_forward(x, w);
    for (float& v : x.row(0)) v += 1.0f;
    const auto pert = deconv_forward(x, w);
    const std::size_t spf = 12;
    for (std::size_t t = 0; t < 10; ++t) {
      const bool same = std::equal(base.begin() + t * spf, base.begin() + (t + 1) * spf, pert.begin() + t * spf);
      if (t >= context) EXPECT_TRUE(same) << "context " << context << " frame " << t;
      if (t < std::min<std::size_t>(context, 3)) EXPECT_FALSE(same) << "context " << context << " frame " << t;
    }
  }
}

TEST(Deconv, StreamResetRestartsHistory) {
  const auto w = deconv_init_random(small_deconv(3), 5);
  Rng rng(5);
  const auto x = random_tensor(4, 6, rng);
  DeconvStream s(w);
  const auto first = s.step(x.row(0));
  s.step(x.row(1));
  s.reset();
  EXPECT_EQ(s.step(x.row(0)), first);
}

TEST(Deconv, InstrumentedMacsMatchFormula) {
  const auto c = small_deconv(4);
  const auto w = deconv_init_random(c, 6);
  Rng rng(6);
  DeconvStream s(w);
  for (std::size_t t = 0; t < 7; ++t) {
    const auto x = random_tensor(1, 6, rng);
    MacCounter counter;
    s.step(x.row(0));
    EXPECT_EQ(counter.count(), deconv_flops(c, std::min<std::size_t>(t + 1, 4)));
  }
  EXPECT_EQ(deconv_flops_per_frame(c), deconv_flops(c, 4));
}

TEST(Deconv, InvalidConfigRejected) {
  auto c = small_deconv(2);
  c.channels.back() = 2;
  EXPECT_THROW(c.validate(), Error);
  c = small_deconv(0);
  EXPECT_THROW(c.validate(), Error);
}
