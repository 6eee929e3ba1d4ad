#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_support.hpp"
#include "ternkit/error.hpp"
#include "ternkit/losses.hpp"
#include "ternkit/quantizers.hpp"

using namespace ternkit;
using ternkit::testing::check_gradients;
using ternkit::testing::random_tensor;

namespace {

std::vector<Var> constants(Tape& t, const std::vector<Tensor>& ts) {
  std::vector<Var> out;
  for (const auto& x : ts) out.push_back(t.constant(x));
  return out;
}

}  // namespace

TEST(LmLoss, PerfectLogitsGiveZero) {
  Tape t;
  Tensor logits = Tensor::zeros({3, 5});
  const std::vector<std::int32_t> tgt{1, 4, 0};
  for (std::size_t r = 0; r < 3; ++r) logits.at(r, tgt[r]) = 1e3;
  EXPECT_NEAR(lm_loss(t.constant(logits), tgt, std::vector<std::uint8_t>{1, 1, 1}).value().data[0], 0.0, 1e-12);
}

TEST(LmLoss, UniformIsLogVocab) {
  Tape t;
  const std::vector<std::int32_t> tgt{3, 200};
  const double v = lm_loss(t.constant(Tensor::zeros({2, 256})), tgt, std::vector<std::uint8_t>{1, 1}).value().data[0];
  EXPECT_NEAR(v, std::log(256.0), 1e-12);
}

TEST(LmLoss, MaskedPositionsDoNotMatter) {
  std::mt19937_64 rng(1);
  Tensor logits = random_tensor(rng, {4, 7});
  const std::vector<std::uint8_t> mask{0, 1, 0, 1};
  Tape t;
  const double a = lm_loss(t.constant(logits), std::vector<std::int32_t>{0, 2, 3, 6}, mask).value().data[0];
  for (std::size_t v = 0; v < 7; ++v) logits.at(0, v) += 5.0 * static_cast<double>(v);
  const double b = lm_loss(t.constant(logits), std::vector<std::int32_t>{5, 2, 1, 6}, mask).value().data[0];
  EXPECT_EQ(a, b);
}

TEST(LmLoss, EmptyMaskThrows) {
  Tape t;
  EXPECT_THROW(lm_loss(t.constant(Tensor::zeros({2, 3})), std::vector<std::int32_t>{0, 0},
                       std::vector<std::uint8_t>{0, 0}),
               EmptySupervisionError);
}

TEST(AuxLoss, IdenticalHiddensGiveZero) {
  std::mt19937_64 rng(2);
  Tape t;
  auto h = constants(t, {random_tensor(rng, {5, 8}), random_tensor(rng, {5, 8})});
  EXPECT_EQ(aux_loss(h, h).value().data[0], 0.0);
}

TEST(AuxLoss, SingleLayerExample) {
  Tape t;
  std::vector<Var> teacher{t.constant(Tensor::matrix(1, 2, {1, 1}))};
  std::vector<Var> student{t.constant(Tensor::matrix(1, 2, {0, 0}))};
  EXPECT_DOUBLE_EQ(aux_loss(teacher, student).value().data[0], 1.0);
}

TEST(AuxLoss, AveragesOverLayers) {
  std::mt19937_64 rng(3);
  Tape t;
  auto th = constants(t, {random_tensor(rng, {3, 4})});
  auto sh = constants(t, {random_tensor(rng, {3, 4})});
  const double one = aux_loss(th, sh).value().data[0];
  std::vector<Var> th2{th[0], th[0]}, sh2{sh[0], sh[0]};
  EXPECT_NEAR(aux_loss(th2, sh2).value().data[0], one, 1e-15);
}

TEST(AuxLoss, MismatchedShapesThrow) {
  Tape t;
  std::vector<Var> a{t.constant(Tensor::zeros({2, 3}))};
  std::vector<Var> b{t.constant(Tensor::zeros({2, 4}))};
  std::vector<Var> c{t.constant(Tensor::zeros({2, 3})), t.constant(Tensor::zeros({2, 3}))};
  EXPECT_THROW(aux_loss(a, b), DimensionError);
  EXPECT_THROW(aux_loss(a, c), DimensionError);
}

TEST(AuxLoss, TeacherReceivesNoGradient) {
  std::mt19937_64 rng(4);
  Tape t;
  Tensor tv = random_tensor(rng, {3, 4});
  Tensor sv = random_tensor(rng, {3, 4});
  tv.requires_grad = sv.requires_grad = true;
  std::vector<Var> th{t.leaf(tv)}, sh{t.leaf(sv)};
  Var loss = aux_loss(th, sh);
  t.backward(loss);
  for (double g : th[0].grad().data) EXPECT_EQ(g, 0.0);
  double norm = 0.0;
  for (double g : sh[0].grad().data) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(TotalLoss, WeightedSumExample) {
  Tape t;
  Var lm = t.constant(Tensor::scalar(2.0));
  Var aux = t.constant(Tensor::scalar(1.0));
  EXPECT_DOUBLE_EQ(total_loss(lm, aux, {0.1}).value().data[0], 2.1);
}

TEST(TotalLoss, ZeroLambdaIsBitwiseLm) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    Tape t;
    Var lm = t.constant(Tensor::scalar(std::uniform_real_distribution<double>(0, 10)(rng)));
    Var aux = t.constant(Tensor::scalar(std::uniform_real_distribution<double>(0, 10)(rng)));
    EXPECT_EQ(total_loss(lm, aux, {0.0}).value().data[0], lm.value().data[0]);
  }
}

TEST(TotalLoss, NegativeLambdaRejected) {
  EXPECT_THROW(LossWeights{-0.1}.validate(), ContractError);
  EXPECT_NO_THROW(LossWeights{0.0}.validate());
}

TEST(ActionL1, Examples) {
  Tape t;
  Var a = t.constant(Tensor::matrix(1, 2, {0.5, -0.5}));
  EXPECT_EQ(action_l1_loss(a, a).value().data[0], 0.0);
  Var z = t.constant(Tensor::matrix(1, 2, {0.0, 0.0}));
  Var p = t.constant(Tensor::matrix(1, 2, {1.0, -1.0}));
  EXPECT_DOUBLE_EQ(action_l1_loss(p, z).value().data[0], 2.0);
}

TEST(ActionL1, InvariantToJointDimensionPermutation) {
  std::mt19937_64 rng(6);
  Tensor a = random_tensor(rng, {4, 3});
  Tensor b = random_tensor(rng, {4, 3});
  Tensor ap = a, bp = b;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      ap.at(r, c) = a.at(r, (c + 1) % 3);
      bp.at(r, c) = b.at(r, (c + 1) % 3);
    }
  Tape t;
  EXPECT_NEAR(action_l1_loss(t.constant(a), t.constant(b)).value().data[0],
              action_l1_loss(t.constant(ap), t.constant(bp)).value().data[0], 1e-14);
}

TEST(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const std::vector<std::int32_t> tgt{1, 0, 4, 2, 3, 3};
  const std::vector<std::uint8_t> mask{0, 1, 1, 0, 1, 1};
  auto lm = check_gradients(
      [&](Tape&, std::span<const Var> v) { return lm_loss(v[0], tgt, mask); }, {random_tensor(rng, {6, 5})});
  EXPECT_LT(lm.max_rel_error, 1e-6);

  auto aux = check_gradients(
      [&](Tape&, std::span<const Var> v) {
        std::vector<Var> th{v[0], v[1]}, sh{v[2], v[3]};
        return aux_loss(th, sh);
      },
      {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4}),
       random_tensor(rng, {3, 4})});
  // teacher inputs are detached, so only the student entries are meaningful
  EXPECT_LT(aux.rel_errors[2], 1e-6);
  EXPECT_LT(aux.rel_errors[3], 1e-6);

  // kink-free random point
  auto l1 = check_gradients([&](Tape&, std::span<const Var> v) { return action_l1_loss(v[0], v[1]); },
                            {random_tensor(rng, {5, 2}), random_tensor(rng, {5, 2})}, 1e-6);
  EXPECT_LT(l1.max_rel_error, 1e-6);
}

// Composite objective through quantized layers at hidden size 64, checked
// against the frozen-code surrogate that the straight-through estimator
// differentiates.
TEST(LossGradients, CompositeThroughFakeQuantAtWidth64) {
  std::mt19937_64 rng(8);
  const std::size_t n = 64, rows = 6, V = 11;
  const Tensor w_t = random_tensor(rng, {n, n}, -0.2, 0.2);
  const Tensor w_s = random_tensor(rng, {n, n}, -0.2, 0.2);
  const Tensor head = random_tensor(rng, {V, n}, -0.2, 0.2);
  const Tensor x_t = random_tensor(rng, {rows, n});
  std::vector<std::int32_t> tgt(rows);
  for (std::size_t r = 0; r < rows; ++r) tgt[r] = static_cast<std::int32_t>(r % V);
  const std::vector<std::uint8_t> mask{0, 0, 1, 1, 1, 1};
  auto build = [&](Tape& t, std::span<const Var> v) {
    Var x = v[0];
    Var teacher = ad::matmul_nt(t.constant(x_t), t.constant(w_t));
    Var student = ad::matmul_nt(fake_quant_acts(x), fake_quant_weights(v[1]));
    std::vector<Var> th{teacher}, sh{student};
    Var lm = lm_loss(ad::matmul_nt(student, t.constant(head)), tgt, mask);
    return total_loss(lm, aux_loss(th, sh), {0.1});
  };
  auto r = check_gradients(build, {random_tensor(rng, {rows, n}), w_s}, 1e-5, true, 200);
  EXPECT_LT(r.max_rel_error, 1e-4);
}
