#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "ternkit/error.hpp"
#include "ternkit/gemm.hpp"

using namespace ternkit;
using ternkit::testing::random_tensor;

namespace {

std::vector<std::int8_t> random_codes(std::mt19937_64& rng, std::size_t n, int lo, int hi) {
  std::uniform_int_distribution<int> d(lo, hi);
  std::vector<std::int8_t> c(n);
  for (auto& v : c) v = static_cast<std::int8_t>(d(rng));
  return c;
}

// Brute-force oracle straight from unpacked codes, independent of both kernels.
std::vector<std::int32_t> brute_force(const std::vector<std::int8_t>& w, const std::vector<std::int8_t>& a,
                                      std::size_t m, std::size_t n) {
  std::vector<std::int32_t> y(m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[i] += static_cast<std::int32_t>(w[i * n + j]) * a[j];
  return y;
}

}  // namespace

TEST(GemvRef, IdentityCodes) {
  auto w = pack(std::vector<std::int8_t>{1, 0, 0, 0, 1, 0, 0, 0, 1}, 3, 3, 7.0);
  std::vector<std::int8_t> a{5, -7, 0};
  EXPECT_EQ(gemv_ref(w, a), (std::vector<std::int32_t>{5, -7, 0}));
}

TEST(GemvRef, SignedSum) {
  auto w = pack(std::vector<std::int8_t>{1, -1, 1}, 1, 3, 1.0);
  std::vector<std::int8_t> a{10, 20, 30};
  EXPECT_EQ(gemv_ref(w, a), (std::vector<std::int32_t>{20}));
}

TEST(GemvRef, AllZeroWeightsIssueNoAdds) {
  auto w = pack(std::vector<std::int8_t>(4 * 9, 0), 4, 9, 1.0);
  std::vector<std::int8_t> a(9, 100);
  counters_reset();
  EXPECT_EQ(gemv_ref(w, a), std::vector<std::int32_t>(4, 0));
  EXPECT_EQ(counters_snapshot().int_adds, 0u);
  EXPECT_EQ(counters_snapshot().skipped_zero_weights, 36u);
  counters_reset();
  EXPECT_EQ(gemv_fast(w, a), std::vector<std::int32_t>(4, 0));
  EXPECT_EQ(counters_snapshot().int_adds, 0u);
}

TEST(GemvRef, DimensionMismatch) {
  auto w = pack(std::vector<std::int8_t>{1, -1, 1}, 1, 3, 1.0);
  std::vector<std::int8_t> a{1, 2};
  EXPECT_THROW(gemv_ref(w, a), DimensionError);
  EXPECT_THROW(gemv_fast(w, a), DimensionError);
}

TEST(GemvRef, InnerDimensionBoundEnforced) {
  const std::size_t n = kMaxInnerDim + 4;
  auto w = pack(std::vector<std::int8_t>(n, 0), 1, n, 1.0);
  std::vector<std::int8_t> a(n, 0);
  EXPECT_THROW(gemv_ref(w, a), ContractError);
  EXPECT_THROW(gemv_fast(w, a), ContractError);
}

TEST(GemvFast, MatchesOracleOnRandomShapes) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> dim(1, 256);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = dim(rng), n = dim(rng);
    auto wc = random_codes(rng, m * n, -1, 1);
    auto ac = random_codes(rng, n, -128, 127);
    auto w = pack(wc, m, n, 1.0);
    auto expect = brute_force(wc, ac, m, n);
    ASSERT_EQ(gemv_ref(w, ac), expect);
    ASSERT_EQ(gemv_fast(w, ac), expect);
  }
}

TEST(GemvFast, RaggedWidths) {
  std::mt19937_64 rng(32);
  for (std::size_t n : {1u, 2u, 3u, 5u, 63u, 65u, 127u, 130u}) {
    auto wc = random_codes(rng, 3 * n, -1, 1);
    auto ac = random_codes(rng, n, -128, 127);
    auto w = pack(wc, 3, n, 1.0);
    EXPECT_EQ(gemv_fast(w, ac), gemv_ref(w, ac)) << n;
  }
}

TEST(GemvFast, SingleElement) {
  auto w = pack(std::vector<std::int8_t>{-1}, 1, 1, 1.0);
  std::vector<std::int8_t> a{-128};
  EXPECT_EQ(gemv_fast(w, a), (std::vector<std::int32_t>{128}));
  EXPECT_EQ(gemv_ref(w, a), (std::vector<std::int32_t>{128}));
}

TEST(GemvFast, NoOverflowAtMaximumInnerDimension) {
  const std::size_t n = kMaxInnerDim;
  std::vector<std::int8_t> plus(n, 1), minus(n, -1);
  auto w = pack(plus, 1, n, 1.0);
  auto wn = pack(minus, 1, n, 1.0);
  std::vector<std::int8_t> a127(n, 127), a128(n, -128);
  const auto big = static_cast<std::int32_t>(n) * 127;
  const auto bigger = static_cast<std::int32_t>(n) * 128;
  EXPECT_EQ(gemv_fast(w, a127)[0], big);
  EXPECT_EQ(gemv_fast(wn, a127)[0], -big);
  EXPECT_EQ(gemv_fast(wn, a128)[0], bigger);
  EXPECT_EQ(gemv_ref(w, a128)[0], -bigger);
}

TEST(LinearForward, LosslessScalarCase) {
  auto q = quantize_weights(Tensor::matrix(1, 1, {2.0}));
  EXPECT_EQ(q.alpha, 2.0);
  auto y = linear_forward(pack(q), Tensor::matrix(1, 1, {3.0}));
  EXPECT_EQ(y.data[0], 6.0);
}

TEST(LinearForward, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(33);
  auto w = pack(quantize_weights(random_tensor(rng, {5, 8})));
  auto y = linear_forward(w, Tensor::zeros({2, 8}));
  for (double v : y.data) EXPECT_EQ(v, 0.0);
}

TEST(LinearForward, DimensionMismatch) {
  auto w = pack(quantize_weights(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})));
  EXPECT_THROW(linear_forward(w, Tensor::zeros({1, 4})), DimensionError);
}

TEST(LinearForward, RelativeErrorAgainstFloatProduct) {
  // Two float references per layer: W·x and (alpha·codes)·x. The first error
  // is dominated by ternarizing uniform weights, whose expected relative L2
  // is sqrt(E[(w-q(w))^2] / E[w^2]) = sqrt(0.0521/0.3333) ~= 0.395 for
  // w ~ U[-1,1]. The second isolates the INT8 activation path.
  std::mt19937_64 rng(34);
  double worst_full = 0.0, mean_full = 0.0, worst_act = 0.0;
  constexpr int kLayers = 200;
  for (int trial = 0; trial < kLayers; ++trial) {
    Tensor w = random_tensor(rng, {256, 256}, -1.0, 1.0);
    Tensor x = random_tensor(rng, {1, 256}, -1.0, 1.0);
    auto q = quantize_weights(w);
    auto y = linear_forward(pack(q), x);
    Tensor exact = matmul_nt_value(x, w);
    Tensor ternary = matmul_nt_value(x, dequantize(q));
    double nf = 0.0, df = 0.0, na = 0.0, da = 0.0;
    for (std::size_t i = 0; i < 256; ++i) {
      nf += (y.data[i] - exact.data[i]) * (y.data[i] - exact.data[i]);
      df += exact.data[i] * exact.data[i];
      na += (y.data[i] - ternary.data[i]) * (y.data[i] - ternary.data[i]);
      da += ternary.data[i] * ternary.data[i];
    }
    worst_full = std::max(worst_full, std::sqrt(nf / df));
    mean_full += std::sqrt(nf / df) / kLayers;
    worst_act = std::max(worst_act, std::sqrt(na / da));
  }
  EXPECT_LE(worst_act, 0.15);
  EXPECT_LE(worst_act, 0.01);  // measured 0.0045
  EXPECT_NEAR(mean_full, 0.395, 0.02);
  EXPECT_LE(worst_full, 0.5);  // measured 0.437
}

TEST(Counters, SquareMatvecFloatMulsAreTwoNPlusSetup) {
  std::mt19937_64 rng(35);
  for (std::size_t n : {64u, 256u, 1024u}) {
    auto w = pack(quantize_weights(random_tensor(rng, {n, n})));
    Tensor x = random_tensor(rng, {1, n});
    counters_reset();
    linear_forward(w, x);
    const auto c = counters_snapshot();
    EXPECT_EQ(c.float_muls, 2 * n + kScaleSetupOps);
    EXPECT_LE(c.int_adds, n * n);
    EXPECT_GT(c.int_adds, 0u);
  }
}

TEST(Counters, AllZeroWeightsThroughLinearForward) {
  auto w = pack(std::vector<std::int8_t>(16 * 16, 0), 16, 16, 1.0);
  counters_reset();
  linear_forward(w, Tensor::full({1, 16}, 0.5));
  EXPECT_EQ(counters_snapshot().int_adds, 0u);
}

TEST(Counters, TwoIdenticalCallsDoubleEverything) {
  std::mt19937_64 rng(36);
  auto w = pack(quantize_weights(random_tensor(rng, {40, 70})));
  Tensor x = random_tensor(rng, {3, 70});
  counters_reset();
  linear_forward(w, x);
  const auto once = counters_snapshot();
  linear_forward(w, x);
  const auto twice = counters_snapshot();
  EXPECT_EQ(twice.int_adds, 2 * once.int_adds);
  EXPECT_EQ(twice.float_muls, 2 * once.float_muls);
  EXPECT_EQ(twice.skipped_zero_weights, 2 * once.skipped_zero_weights);
}
