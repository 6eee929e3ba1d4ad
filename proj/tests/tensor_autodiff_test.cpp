#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "ternkit/error.hpp"
#include "ternkit/quantizers.hpp"
#include "ternkit/tensor.hpp"

using namespace ternkit;
using ternkit::testing::check_gradients;
using ternkit::testing::random_tensor;

namespace {

constexpr double kFdStep = 1e-4;
constexpr double kFdTol = 1e-3;

}  // namespace

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor::zeros({0, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape t;
  auto id = t.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto b = t.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(ad::matmul(id, b).value().data, b.value().data);
}

TEST(Matmul, SmallProduct) {
  Tape t;
  auto a = t.constant(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto b = t.constant(Tensor::matrix(2, 1, {1, 1}));
  auto c = ad::matmul(a, b);
  EXPECT_EQ(c.value().shape, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(c.value().data, (std::vector<double>{3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape t;
  auto a = t.constant(Tensor::zeros({2, 3}));
  auto b = t.constant(Tensor::zeros({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {4, 5});
  Tape t;
  a.requires_grad = true;
  auto va = t.leaf(a);
  auto vb = t.constant(b);
  t.backward(ad::sum(ad::matmul(va, vb)));
  // d/da_ip sum_ij a_ip b_pj = sum_j b_pj
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      double rowsum = 0.0;
      for (std::size_t j = 0; j < 5; ++j) rowsum += b.at(p, j);
      EXPECT_NEAR(va.grad().at(i, p), rowsum, 1e-12);
    }
  auto fd = check_gradients([](Tape&, std::span<const Var> v) { return ad::sum(ad::matmul(v[0], v[1])); },
                            {a, b}, 1e-6);
  EXPECT_LT(fd.max_rel_error, 1e-6);
}

TEST(Elementwise, AddZeroIsIdentity) {
  Tape t;
  auto x = t.constant(Tensor::matrix(1, 3, {1.5, -2, 3}));
  auto z = t.constant(Tensor::scalar(0.0));
  EXPECT_EQ(ad::add(x, z).value().data, x.value().data);
}

TEST(Elementwise, IncompatibleShapesRejected) {
  Tape t;
  auto x = t.constant(Tensor::zeros({2, 3}));
  auto y = t.constant(Tensor::zeros({3, 2}));
  EXPECT_THROW(ad::add(x, y), DimensionError);
  EXPECT_THROW(ad::mul(x, y), DimensionError);
}

TEST(Elementwise, LayernormOfConstantRowIsZero) {
  Tape t;
  auto x = t.constant(Tensor::full({2, 8}, 3.25));
  for (double v : ad::layernorm(x).value().data) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, GeluGradientMatchesFiniteDifferenceAtHalf) {
  Tensor x = Tensor::scalar(0.5);
  auto fd = check_gradients([](Tape&, std::span<const Var> v) { return ad::sum(ad::gelu(v[0])); }, {x}, 1e-6);
  EXPECT_LT(fd.max_rel_error, 1e-5);
}

TEST(CrossEntropy, LargeMarginCorrectLogitsGiveNearZeroLoss) {
  Tape t;
  auto logits = t.constant(Tensor::matrix(2, 3, {100, 0, 0, 0, 0, 100}));
  std::vector<std::int32_t> tg{0, 2};
  std::vector<std::uint8_t> mask{1, 1};
  EXPECT_LT(ad::softmax_cross_entropy(logits, tg, mask).value().data[0], 1e-30);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  Tape t;
  auto logits = t.constant(Tensor::zeros({3, 4}));
  std::vector<std::int32_t> tg{0, 1, 3};
  std::vector<std::uint8_t> mask{1, 1, 1};
  EXPECT_NEAR(ad::softmax_cross_entropy(logits, tg, mask).value().data[0], std::log(4.0), 1e-12);
  EXPECT_NEAR(std::log(4.0), 1.3863, 1e-4);
}

TEST(CrossEntropy, MaskingHalfHalvesSummedLoss) {
  // Identical rows: the summed (count * mean) loss over half the rows is half.
  Tape t;
  Tensor l = Tensor::zeros({4, 5});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) l.at(i, j) = 0.3 * static_cast<double>(j);
  auto logits = t.constant(l);
  std::vector<std::int32_t> tg{1, 1, 1, 1};
  std::vector<std::uint8_t> all{1, 1, 1, 1}, half{1, 0, 1, 0};
  const double full_sum = 4 * ad::softmax_cross_entropy(logits, tg, all).value().data[0];
  const double half_sum = 2 * ad::softmax_cross_entropy(logits, tg, half).value().data[0];
  EXPECT_NEAR(half_sum, full_sum / 2.0, 1e-12);
}

TEST(CrossEntropy, EmptyMaskIsExplicitError) {
  Tape t;
  auto logits = t.constant(Tensor::zeros({2, 3}));
  std::vector<std::int32_t> tg{0, 1};
  std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(ad::softmax_cross_entropy(logits, tg, none), EmptySupervisionError);
}

TEST(CrossEntropy, MaskedPositionsGetZeroGradient) {
  Tape t;
  std::mt19937_64 rng(3);
  Tensor l = random_tensor(rng, {3, 4});
  l.requires_grad = true;
  auto logits = t.leaf(l);
  std::vector<std::int32_t> tg{0, 1, 2};
  std::vector<std::uint8_t> mask{1, 0, 1};
  t.backward(ad::softmax_cross_entropy(logits, tg, mask));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(logits.grad().at(1, j), 0.0);
}

TEST(Ste, ForwardReturnsQuantizedValue) {
  Tape t;
  Tensor x = Tensor::matrix(1, 3, {0.1, 0.2, 0.3});
  x.requires_grad = true;
  auto vx = t.leaf(x);
  Tensor q = Tensor::matrix(1, 3, {0, 0, 1});
  auto y = ad::ste_passthrough(vx, q);
  EXPECT_EQ(y.value().data, q.data);
  auto loss = ad::sum(ad::mul(y, t.constant(Tensor::matrix(1, 3, {2, -1, 5}))));
  t.backward(loss);
  EXPECT_EQ(vx.grad().data, (std::vector<double>{2, -1, 5}));
}

TEST(Ste, ShapeMismatchRejected) {
  Tape t;
  auto x = t.constant(Tensor::zeros({1, 3}));
  EXPECT_THROW(ad::ste_passthrough(x, Tensor::zeros({3, 1})), DimensionError);
}

TEST(Ste, FakeQuantLayerMatchesSurrogateFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor(rng, {4, 16});
  Tensor w = random_tensor(rng, {8, 16});
  Tensor probe = random_tensor(rng, {4, 8});
  auto build = [&](Tape& t, std::span<const Var> v) {
    auto y = ad::matmul_nt(fake_quant_acts(v[0]), fake_quant_weights(v[1]));
    return ad::sum(ad::mul(y, t.constant(probe)));
  };
  auto fd = check_gradients(build, {x, w}, kFdStep, /*surrogate=*/true);
  EXPECT_LT(fd.max_rel_error, kFdTol);
}

TEST(Ste, LiveAndFrozenSurrogateTapesGiveBitwiseEqualGradients) {
  std::mt19937_64 rng(11);
  Tensor x = random_tensor(rng, {3, 12});
  Tensor w = random_tensor(rng, {5, 12});
  x.requires_grad = w.requires_grad = true;
  auto build = [](Tape&, Var a, Var b) {
    return ad::sum(ad::gelu(ad::matmul_nt(fake_quant_acts(a), fake_quant_weights(b))));
  };
  Tape live;
  live.set_quant_trace(QuantTrace::Record);
  auto lx = live.leaf(x), lw = live.leaf(w);
  live.backward(build(live, lx, lw));

  Tape frozen;
  frozen.set_quant_trace(QuantTrace::Replay, live.quant_records());
  auto fx = frozen.leaf(x), fw = frozen.leaf(w);
  auto floss = build(frozen, fx, fw);
  frozen.backward(floss);
  EXPECT_EQ(lx.grad().data, fx.grad().data);
  EXPECT_EQ(lw.grad().data, fw.grad().data);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Tensor x = Tensor::matrix(2, 2, {1, 2, 3, 4});
  x.requires_grad = true;
  auto v = t.leaf(x);
  t.backward(ad::sum(v));
  EXPECT_EQ(v.grad().data, std::vector<double>(4, 1.0));
}

TEST(Backward, SecondCallIsAnError) {
  Tape t;
  Tensor x = Tensor::scalar(2.0);
  x.requires_grad = true;
  auto loss = ad::sum(t.leaf(x));
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), ContractError);
}

TEST(Backward, NonScalarLossRejected) {
  Tape t;
  Tensor x = Tensor::zeros({2, 2});
  x.requires_grad = true;
  auto v = t.leaf(x);
  EXPECT_THROW(t.backward(v), ContractError);
}

TEST(Backward, SquareChainGivesTwoX) {
  Tensor x = Tensor::matrix(1, 3, {0.5, -1.25, 2.0});
  Tape t;
  x.requires_grad = true;
  auto v = t.leaf(x);
  t.backward(ad::sum(ad::mul(v, v)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(v.grad().data[i], 2.0 * x.data[i]);
  auto fd = check_gradients([](Tape&, std::span<const Var> a) { return ad::sum(ad::mul(a[0], a[0])); }, {x}, 1e-6);
  EXPECT_LT(fd.max_rel_error, 1e-8);
}

// Every differentiable op against central differences on inputs in [-2, 2].
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, FiniteDifferencesAgree) {
  std::mt19937_64 rng(100 + GetParam());
  Tensor a = random_tensor(rng, {4, 6});
  Tensor b = random_tensor(rng, {4, 6});
  Tensor c = random_tensor(rng, {6, 3});
  Tensor row = random_tensor(rng, {6});
  Tensor probe = random_tensor(rng, {4, 6});
  auto weighted = [probe](Tape& t, Var y) {
    // Random projection keeps every output coordinate in play.
    if (y.value().same_shape(probe)) return ad::sum(ad::mul(y, t.constant(probe)));
    return ad::sum(ad::mul(y, y));
  };
  std::vector<std::pair<const char*, ternkit::testing::Builder>> cases = {
      {"add", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::add(v[0], v[1])); }},
      {"sub", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::sub(v[0], v[1])); }},
      {"mul", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::mul(v[0], v[1])); }},
      {"scale", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::scale(v[0], -1.7)); }},
      {"gelu", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::gelu(v[0])); }},
      {"layernorm", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::layernorm(v[0])); }},
      {"matmul", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::matmul(v[0], v[2])); }},
      {"matmul_nt", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::matmul_nt(v[0], v[1])); }},
      {"add_row", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::add_row(v[0], v[3])); }},
      {"mul_row", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::mul_row(v[0], v[3])); }},
      {"mean", [&](Tape&, std::span<const Var> v) { return ad::mean(ad::mul(v[0], v[1])); }},
      {"reshape", [&](Tape& t, std::span<const Var> v) {
         return weighted(t, ad::reshape(ad::reshape(v[0], {6, 4}), {4, 6}));
       }},
      {"select_rows", [&](Tape&, std::span<const Var> v) {
         std::vector<std::size_t> rows{3, 0, 3};
         return ad::sum(ad::mul(ad::select_rows(v[0], rows), ad::select_rows(v[1], rows)));
       }},
      {"concat_rows", [&](Tape&, std::span<const Var> v) {
         std::vector<Var> parts{v[0], v[1]};
         return ad::sum(ad::gelu(ad::concat_rows(parts)));
       }},
      {"gather_rows", [&](Tape&, std::span<const Var> v) {
         std::vector<std::int32_t> ids{1, 1, 3};
         auto g = ad::gather_rows(v[0], ids);
         return ad::sum(ad::mul(g, g));
       }},
      {"attention", [&](Tape& t, std::span<const Var> v) {
         auto o = ad::causal_attention(v[0], v[1], ad::scale(v[0], 0.5), 2, 2);
         return weighted(t, o);
       }},
      {"cross_entropy", [&](Tape&, std::span<const Var> v) {
         std::vector<std::int32_t> tg{0, 5, 2, 3};
         std::vector<std::uint8_t> mask{1, 0, 1, 1};
         return ad::softmax_cross_entropy(v[0], tg, mask);
       }},
  };
  // abs has a kink at 0; inputs in [-2,2] with step 1e-4 stay clear of it
  // with overwhelming probability for these seeds.
  cases.push_back({"abs", [&](Tape& t, std::span<const Var> v) { return weighted(t, ad::abs(v[0])); }});
  for (auto& [name, build] : cases) {
    auto fd = check_gradients(build, {a, b, c, row}, kFdStep);
    EXPECT_LT(fd.max_rel_error, kFdTol) << name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 3));

TEST(Attention, PositionZeroIgnoresLaterTokens) {
  std::mt19937_64 rng(9);
  Tensor q = random_tensor(rng, {4, 8}), k = random_tensor(rng, {4, 8}), v = random_tensor(rng, {4, 8});
  Tape t1;
  auto o1 = ad::causal_attention(t1.constant(q), t1.constant(k), t1.constant(v), 2, 4);
  for (std::size_t j = 0; j < 8; ++j) {
    k.at(3, j) += 1.0;
    v.at(2, j) -= 3.0;
  }
  Tape t2;
  auto o2 = ad::causal_attention(t2.constant(q), t2.constant(k), t2.constant(v), 2, 4);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(o1.value().at(0, j), o2.value().at(0, j));
}

TEST(Determinism, ReplayGivesBitwiseIdenticalValuesAndGradients) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor a = random_tensor(rng, {5, 7});
    Tensor w = random_tensor(rng, {3, 7});
    a.requires_grad = w.requires_grad = true;
    Tape t;
    auto va = t.leaf(a), vw = t.leaf(w);
    auto y = ad::layernorm(ad::gelu(ad::matmul_nt(va, vw)));
    auto loss = ad::sum(ad::mul(y, y));
    t.backward(loss);
    return std::make_tuple(loss.value().data, va.grad().data, vw.grad().data);
  };
  EXPECT_EQ(run(), run());
}
