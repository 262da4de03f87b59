#include <gtest/gtest.h>

#include <cmath>

#include "tmimi/numerics.hpp"

using namespace tmimi;

namespace {

// Naive i-j-k product accumulating in float from 0 in ascending k.
Tensor2D naive_matmul(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      float s = 0.0f;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Matmul, IdentityCase) {
  const auto b = Tensor2D::from_rows({{3, 4}, {5, 6}});
  EXPECT_EQ(matmul(Tensor2D::identity(2), b), b);
}

TEST(Matmul, HandComputed) {
  const auto c = matmul(Tensor2D::from_rows({{1, 2}}), Tensor2D::from_rows({{3}, {4}}));
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 11.0f);
}

TEST(Matmul, ShapeMismatchThrows) {
  try {
    matmul(Tensor2D(2, 3), Tensor2D(2, 3));
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Matmul, SevenByFiveByThreeMatchesTripleLoop) {
  Rng rng(11);
  const auto a = random_tensor(7, 5, rng);
  const auto b = random_tensor(5, 3, rng);
  EXPECT_EQ(matmul(a, b), naive_matmul(a, b));
}

TEST(Matmul, BitExactAgainstTripleLoopUpTo16) {
  Rng rng(5);
  for (std::size_t m = 1; m <= 16; m += 3)
    for (std::size_t k = 1; k <= 16; k += 2)
      for (std::size_t n = 1; n <= 16; n += 5) {
        const auto a = random_tensor(m, k, rng, 3.0f);
        const auto b = random_tensor(k, n, rng, 3.0f);
        ASSERT_EQ(matmul(a, b), naive_matmul(a, b)) << m << "x" << k << "x" << n;
      }
}

TEST(Matmul, IdentityOnBothSides) {
  Rng rng(2);
  const auto a = random_tensor(6, 9, rng);
  EXPECT_EQ(matmul(Tensor2D::identity(6), a), a);
  EXPECT_EQ(matmul(a, Tensor2D::identity(9)), a);
}

TEST(Matmul, CountsMacs) {
  MacCounter counter;
  matmul(Tensor2D(3, 4), Tensor2D(4, 5));
  EXPECT_EQ(counter.count(), 60u);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  const std::vector<float> g(3, 1.0f), b(3, 0.0f);
  const auto y = layer_norm(Tensor2D::from_rows({{5, 5, 5}}), g, b);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, UnitVarianceRowUnchanged) {
  const std::vector<float> g(2, 1.0f), b(2, 0.0f);
  const auto y = layer_norm(Tensor2D::from_rows({{1, -1}}), g, b);
  EXPECT_NEAR(y(0, 0), 1.0f, 1e-4);
  EXPECT_NEAR(y(0, 1), -1.0f, 1e-4);
}

TEST(LayerNorm, RandomRowsAreStandardized) {
  Rng rng(3);
  const auto x = random_tensor(3, 8, rng, 4.0f);
  const std::vector<float> g(8, 1.0f), b(8, 0.0f);
  const auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double mean = 0, var = 0;
    for (float v : y.row(r)) mean += v;
    mean /= 8;
    for (float v : y.row(r)) var += (v - mean) * (v - mean);
    EXPECT_LE(std::fabs(mean), 1e-6);
    EXPECT_NEAR(std::sqrt(var / 8), 1.0, 1e-3);
  }
}

TEST(LayerNorm, RejectsMismatchedParameters) {
  const std::vector<float> g(2, 1.0f), b(3, 0.0f);
  EXPECT_THROW(layer_norm(Tensor2D(1, 3), g, b), Error);
}

TEST(Softmax, SymmetricRow) {
  const auto y = softmax_rows(Tensor2D::from_rows({{0, 0}}));
  EXPECT_EQ(y(0, 0), 0.5f);
  EXPECT_EQ(y(0, 1), 0.5f);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const auto y = softmax_rows(Tensor2D::from_rows({{1000, 0}}));
  EXPECT_NEAR(y(0, 0), 1.0f, 1e-6);
  EXPECT_NEAR(y(0, 1), 0.0f, 1e-6);
  EXPECT_TRUE(y.all_finite());
}

TEST(Softmax, MatchesDirectFormula) {
  const auto y = softmax_rows(Tensor2D::from_rows({{1, 2, 3}}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y(0, i), std::exp(i + 1.0) / z, 1e-7);
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  Rng rng(9);
  const auto x = random_tensor(6, 6, rng, 20.0f);
  Mask mask(6, 6);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = r + 1; c < 6; ++c) mask.set(r, c, false);
  const auto y = softmax_rows(x, mask);
  for (std::size_t r = 0; r < 6; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      if (!mask(r, c)) EXPECT_EQ(y(r, c), 0.0f);
      sum += y(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, FullyMaskedRowIsAnError) {
  Mask mask(1, 2, false);
  EXPECT_THROW(softmax_rows(Tensor2D(1, 2), mask), Error);
}

TEST(Softmax, RowsSumToOneUnderWideInputs) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto y = softmax_rows(random_tensor(4, 17, rng, 500.0f));
    for (std::size_t r = 0; r < y.rows(); ++r) {
      float sum = 0;
      for (float v : y.row(r)) sum += v;
      ASSERT_NEAR(sum, 1.0f, 1e-6);
    }
  }
}

TEST(Gelu, KnownValues) {
  EXPECT_EQ(gelu_scalar(0.0f), 0.0f);
  for (float x : {5.0f, 10.0f, 50.0f}) EXPECT_NEAR(gelu_scalar(x), x, 1e-3 * x);
  const double ref = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (1.0 + 0.044715)));
  EXPECT_NEAR(gelu_scalar(1.0f), ref, 1e-6);
  EXPECT_NEAR(gelu_scalar(1.0f), 0.8412, 1e-3);
  EXPECT_TRUE(std::isfinite(gelu_scalar(-1e20f)));
}

TEST(Rng, EqualSeedsGiveEqualStreams) {
  Rng a(123), b(123), c(124);
  bool differs = false;
  for (int i = 0; i < 10000; ++i) {
    const auto x = a.next();
    ASSERT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SplitMix64ReferenceValues) {
  // First outputs of SplitMix64 seeded with 0, as published with the algorithm.
  Rng rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFull);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ull);
  EXPECT_EQ(rng.next(), 0x06C45D188009454Full);
}

TEST(Rng, UniformStaysInRange) {
  Rng rng(77);
  for (int i = 0; i < 100000; ++i) {
    const float u = rng.uniform();
    ASSERT_GE(u, 0.0f);
    ASSERT_LT(u, 1.0f);
  }
}
