#include <gtest/gtest.h>

#include "amsl/fusion/fusion.hpp"
#include "amsl/nn/grad_check.hpp"
#include "support.hpp"

using namespace amsl;
using namespace amsl::fusion;

TEST(Fuse, HandArithmetic) {
  const std::vector<double> zg = {1, 0}, zl = {0, 2};
  EXPECT_EQ(fuse<double>(zg, zl, 0.25, 0.5), (std::vector<double>{0.25, 1.0}));
  EXPECT_EQ(fuse<double>(zg, zl, 1.0, 0.0), zg);
}

TEST(Fuse, EqualReadsScaleBySum) {
  const std::vector<double> v = {0.5, -1.5, 2};
  const auto out = fuse<double>(v, v, 0.3, 0.6);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out[i], 0.9 * v[i], 1e-15);
}

TEST(Fuse, FixedIsUnitWeights) {
  const std::vector<double> zg = {1, 1}, zl = {2, 3}, zero = {0, 0};
  EXPECT_EQ(fixed_fuse<double>(zg, zl), (std::vector<double>{3, 4}));
  EXPECT_EQ(fixed_fuse<double>(zg, zero), zg);
  EXPECT_EQ(fixed_fuse<double>(zg, zl), fuse<double>(zg, zl, 1, 1));
}

TEST(Fuse, ShapeMismatch) {
  const std::vector<double> a = {1, 2}, b = {1};
  EXPECT_THROW(fuse<double>(a, b, 0.5, 0.5), DimensionError);
}

TEST(Fuse, BilinearAndLinearInAlpha) {
  Rng rng(1);
  std::vector<double> a(5), b(5), c(5);
  for (auto* v : {&a, &b, &c})
    for (auto& x : *v) x = rng.uniform(-1, 1);
  std::vector<double> ac(5);
  for (std::size_t i = 0; i < 5; ++i) ac[i] = 2 * a[i] + c[i];
  const auto lhs = fuse<double>(ac, b, 0.3, 0.7);
  const auto f1 = fuse<double>(a, b, 0.3, 0.7), f2 = fuse<double>(c, b, 0.3, 0.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(lhs[i], 2 * f1[i] + f2[i] - 0.7 * b[i], 1e-12);
  const auto x = fuse<double>(a, b, 0.2, 0.1), y = fuse<double>(a, b, 0.4, 0.3), z = fuse<double>(a, b, 0.6, 0.5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(y[i], 0.5 * (x[i] + z[i]), 1e-12);
}

TEST(Gate, AlphaInUnitIntervalAndEvalPure) {
  Rng rng(2);
  FusionGate<double> gate(7, rng);
  const auto train = gate.fusion_weights(nn::Mode::train);
  ASSERT_EQ(train.size(), 14u);
  for (double a : train) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
  }
  EXPECT_EQ(gate.fusion_weights(nn::Mode::eval), gate.fusion_weights(nn::Mode::eval));
}

TEST(Gate, ZeroedAffineGivesOneHalf) {
  Rng rng(3);
  FusionGate<double> gate(3, rng);
  gate.dense.weight.value.fill(0.0);
  gate.dense.bias.value.fill(0.0);
  gate.bn.beta.value.fill(0.0);
  for (auto mode : {nn::Mode::train, nn::Mode::eval})
    for (double a : gate.fusion_weights(mode)) EXPECT_DOUBLE_EQ(a, 0.5);

  const std::vector<double> zg = {1, -2}, zl = {3, 5};
  const auto half = fuse<double>(zg, zl, 0.5, 0.5);
  const auto fixed = fixed_fuse<double>(zg, zl);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(half[i], 0.5 * fixed[i]);
}

TEST(Gate, BackwardMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) EXPECT_LT(amsl::testing::gate_grad_error(4, seed), 1e-3) << seed;
}

TEST(Gate, RunningStatsMoveTowardBatch) {
  Rng rng(4);
  FusionGate<double> gate(2, rng, 0.9);
  const auto before = gate.bn.running_mean.value[0];
  const auto pass = gate.forward(nn::Mode::train);
  gate.update_running_stats(pass);
  EXPECT_NE(gate.bn.running_mean.value[0], before);
  EXPECT_EQ(gate.buffers().size(), 2u);
}
