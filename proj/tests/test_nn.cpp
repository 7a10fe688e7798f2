#include <gtest/gtest.h>

#include <cmath>

#include "amsl/nn/adam.hpp"
#include "amsl/nn/grad_check.hpp"
#include "amsl/nn/layers.hpp"
#include "amsl/nn/losses.hpp"

using namespace amsl;
using namespace amsl::nn;

TEST(Layers, DenseIdentity) {
  Rng rng(0);
  Dense<double> d(LayerSpec::dense("d", 3, 3), rng);
  d.weight.value.fill(0.0);
  for (std::size_t i = 0; i < 3; ++i) d.weight.value[i * 3 + i] = 1.0;
  const Tensor<double> x({2, 3}, {1, -2, 3, 0.5, 0, 7});
  EXPECT_EQ(d.forward(x).output.vec(), x.vec());
}

TEST(Layers, DenseInputGradIsWeightTranspose) {
  Rng rng(1);
  Dense<double> d(LayerSpec::dense("d", 3, 5), rng);
  const Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  auto f = d.forward(x, Mode::train);
  ASSERT_EQ(f.output.shape(), (Shape{2, 5}));
  Tensor<double> dy({2, 5});
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] = 0.1 * static_cast<double>(i);
  const auto dx = d.backward(f.cache, dy);
  ASSERT_EQ(dx.shape(), (Shape{2, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i) {
      double expect = 0;
      for (std::size_t o = 0; o < 5; ++o) expect += dy[n * 5 + o] * d.weight.value[i * 5 + o];
      EXPECT_NEAR(dx[n * 3 + i], expect, 1e-12);
    }
}

TEST(Layers, MaxPoolPicksMax) {
  MaxPool2x2<double> p(LayerSpec::maxpool("p", false));
  const auto y = p.forward(Tensor<double>({1, 2, 2, 1}, {1, 2, 3, 4})).output;
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 4.0);
}

TEST(Layers, MaxPoolCeilKeepsBorder) {
  MaxPool2x2<double> floor_pool(LayerSpec::maxpool("p", false)), ceil_pool(LayerSpec::maxpool("q", true));
  const Tensor<double> x({1, 3, 2, 1}, {1, 2, 5, 0, 9, 3});
  EXPECT_EQ(floor_pool.output_shape(x.shape()), (Shape{1, 1, 1, 1}));
  const auto y = ceil_pool.forward(x).output;
  EXPECT_EQ(y.shape(), (Shape{1, 2, 1, 1}));
  EXPECT_EQ(y.vec(), (std::vector<double>{5, 9}));
  EXPECT_THROW(floor_pool.output_shape({1, 3, 1, 1}), DimensionError);
}

TEST(Layers, ConvValidShape) {
  Rng rng(2);
  Conv2d<double> c(LayerSpec::conv2d("c", 1, 32, false), rng);
  EXPECT_EQ(c.output_shape({1, 8, 8, 1}), (Shape{1, 5, 5, 32}));
  Conv2d<double> same(LayerSpec::conv2d("s", 1, 32, true), rng);
  EXPECT_EQ(same.output_shape({1, 8, 3, 1}), (Shape{1, 8, 3, 32}));
}

TEST(Layers, ConvMatchesDirectSum) {
  Rng rng(3);
  Conv2d<double> c(LayerSpec::conv2d("c", 2, 3, false), rng);
  for (auto& b : c.bias.value.vec()) b = rng.uniform(-1, 1);
  Tensor<double> x({1, 5, 6, 2});
  for (auto& v : x.vec()) v = rng.uniform(-1, 1);
  const auto y = c.forward(x).output;
  ASSERT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
  for (std::size_t oh = 0; oh < 2; ++oh)
    for (std::size_t ow = 0; ow < 3; ++ow)
      for (std::size_t o = 0; o < 3; ++o) {
        double s = c.bias.value[o];
        for (std::size_t kh = 0; kh < 4; ++kh)
          for (std::size_t kw = 0; kw < 4; ++kw)
            for (std::size_t i = 0; i < 2; ++i)
              s += x[((oh + kh) * 6 + (ow + kw)) * 2 + i] * c.weight.value[((kh * 4 + kw) * 2 + i) * 3 + o];
        EXPECT_NEAR(y[(oh * 3 + ow) * 3 + o], s, 1e-12);
      }
}

TEST(Layers, ConvTransposeIsConvAdjoint) {
  // <deconv(x), y> = <x, conv_with_same_kernel(y)> for stride 1, no crop.
  Rng rng(4);
  ConvTranspose2d<double> d(LayerSpec::conv_transpose("d", 2, 3, 1, 0, 0), rng);
  Tensor<double> x({1, 3, 2, 2});
  for (auto& v : x.vec()) v = rng.uniform(-1, 1);
  const auto y = d.forward(x).output;
  ASSERT_EQ(y.shape(), (Shape{1, 6, 5, 3}));
  Tensor<double> g(y.shape());
  for (auto& v : g.vec()) v = rng.uniform(-1, 1);
  double lhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * g[i];
  double rhs = 0;
  for (std::size_t ih = 0; ih < 3; ++ih)
    for (std::size_t iw = 0; iw < 2; ++iw)
      for (std::size_t ci = 0; ci < 2; ++ci) {
        double acc = 0;
        for (std::size_t kh = 0; kh < 4; ++kh)
          for (std::size_t kw = 0; kw < 4; ++kw)
            for (std::size_t co = 0; co < 3; ++co)
              acc += d.weight.value[((ci * 4 + kh) * 4 + kw) * 3 + co] * g[((ih + kh) * 5 + (iw + kw)) * 3 + co];
        rhs += x[(ih * 2 + iw) * 2 + ci] * acc;
      }
  double bias_term = 0;
  for (std::size_t i = 0; i < g.size(); ++i) bias_term += g[i] * d.bias.value[i % 3];
  EXPECT_NEAR(lhs, rhs + bias_term, 1e-10);
}

TEST(Layers, ShapeMismatchNamesLayer) {
  Rng rng(5);
  Dense<double> d(LayerSpec::dense("head.fc", 4, 2), rng);
  try {
    d.forward(Tensor<double>({1, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("head.fc"), std::string::npos);
  }
}

TEST(Layers, SigmoidDerivativeAtZero) {
  Sigmoid<double> s(LayerSpec::simple(LayerKind::sigmoid, "s"));
  auto f = s.forward(Tensor<double>({1}, {0.0}), Mode::train);
  EXPECT_DOUBLE_EQ(f.output[0], 0.5);
  EXPECT_DOUBLE_EQ(s.backward(f.cache, Tensor<double>({1}, {1.0}))[0], 0.25);
}

TEST(Layers, SoftmaxRowsSumToOne) {
  Rng rng(6);
  Tensor<double> x({20, 7});
  for (auto& v : x.vec()) v = rng.uniform(-30, 30);
  const auto y = Softmax<double>::apply(x);
  for (std::size_t r = 0; r < 20; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GT(y[r * 7 + j], 0.0);
      s += y[r * 7 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Losses, SoftmaxCrossEntropyGradIsProbsMinusOneHot) {
  Rng rng(7);
  Tensor<double> logits({3, 4});
  for (auto& v : logits.vec()) v = rng.uniform(-2, 2);
  const std::vector<int> labels = {0, 3, 1};
  const auto ce = softmax_cross_entropy(logits, labels);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 4; ++j) {
      const double onehot = static_cast<int>(j) == labels[r] ? 1.0 : 0.0;
      EXPECT_NEAR(ce.grad[r * 4 + j], (ce.probs[r * 4 + j] - onehot) / 3.0, 1e-12);
    }
  auto loss = [&]() { return softmax_cross_entropy(logits, labels).loss; };
  const auto numeric = numeric_gradient<double>(loss, logits.span(), 1e-6);
  EXPECT_LT(max_relative_error<double>(ce.grad.span(), numeric), 1e-6);
}

TEST(Losses, UniformLogitsGiveLogClasses) {
  const auto ce = softmax_cross_entropy(Tensor<double>({7, 7}), {0, 1, 2, 3, 4, 5, 6});
  EXPECT_NEAR(ce.loss, std::log(7.0), 1e-12);
  EXPECT_NEAR(ce.loss, 1.9459, 1e-4);
}

TEST(Layers, DropoutOnlyInTraining) {
  Dropout<double> d(LayerSpec::dropout("drop", 0.5));
  Tensor<double> x({1, 1000}, 1.0);
  EXPECT_EQ(d.forward(x, Mode::eval, 1).output.vec(), x.vec());
  const auto y = d.forward(x, Mode::train, 1).output;
  std::size_t zeros = 0;
  for (double v : y.vec()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    zeros += v == 0.0;
  }
  EXPECT_GT(zeros, 400u);
  EXPECT_LT(zeros, 600u);
  EXPECT_EQ(d.forward(x, Mode::train, 1).output.vec(), y.vec());
}

TEST(Layers, StaleCacheRejected) {
  Rng rng(8);
  Dense<double> d(LayerSpec::dense("d", 2, 2), rng);
  auto f = d.forward(Tensor<double>({1, 2}, {1, 1}), Mode::train);
  ++d.weight.version;
  EXPECT_THROW(d.backward(f.cache, Tensor<double>({1, 2})), ContractError);
  EXPECT_THROW(d.backward(Cache<double>{}, Tensor<double>({1, 2})), ContractError);
  Dense<double> other(LayerSpec::dense("e", 2, 2), rng);
  auto g = d.forward(Tensor<double>({1, 2}, {1, 1}), Mode::train);
  EXPECT_THROW(other.backward(g.cache, Tensor<double>({1, 2})), ContractError);
}

TEST(Layers, EvalForwardIsPure) {
  Rng rng(9);
  Sequential<double> net({LayerSpec::conv2d("c", 1, 4, true), LayerSpec::maxpool("p", true),
                          LayerSpec::simple(LayerKind::flatten, "f"), LayerSpec::dense("d", 4 * 4 * 2, 3)},
                         rng);
  Tensor<double> x({2, 8, 3, 1});
  for (auto& v : x.vec()) v = rng.uniform(-1, 1);
  EXPECT_EQ(net.forward(x, Mode::eval).output.vec(), net.forward(x, Mode::eval).output.vec());
}

// ------------------------------------------------------------ grad check

TEST(GradCheck, DenseFourToThree) {
  const auto r = grad_check(LayerSpec::dense("d", 4, 3), {5, 4}, 1e-4, 1e-4, 0);
  EXPECT_TRUE(r.pass) << r.worst << " " << r.max_rel_error;
}

TEST(GradCheck, ConvOneKernelOnSixBySix) {
  const auto r = grad_check(LayerSpec::conv2d("c", 1, 1, false), {1, 6, 6, 1}, 1e-4, 1e-4, 0);
  EXPECT_TRUE(r.pass) << r.worst << " " << r.max_rel_error;
}

TEST(GradCheck, BatchNormTrainBatchOfEight) {
  const auto r = grad_check(LayerSpec::batchnorm("bn", 3), {8, 3}, 1e-4, 1e-3, 0);
  EXPECT_TRUE(r.pass) << r.worst << " " << r.max_rel_error;
}

struct LayerCase {
  const char* label;
  LayerSpec spec;
  Shape input;
  double tol;
  Mode mode = Mode::train;
};

class EveryLayer : public ::testing::TestWithParam<LayerCase> {};

TEST_P(EveryLayer, PassesOverTenSeeds) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = grad_check(c.spec, c.input, 1e-5, c.tol, seed, c.mode);
    EXPECT_TRUE(r.pass) << c.label << " seed " << seed << ": " << r.worst << " rel " << r.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(
    Layers, EveryLayer,
    ::testing::Values(
        LayerCase{"conv_valid", LayerSpec::conv2d("c", 2, 3, false), {2, 6, 5, 2}, 1e-4},
        LayerCase{"conv_same", LayerSpec::conv2d("c", 2, 3, true), {2, 5, 3, 2}, 1e-4},
        LayerCase{"maxpool", LayerSpec::maxpool("p", false), {2, 4, 6, 3}, 1e-4},
        LayerCase{"maxpool_ceil", LayerSpec::maxpool("p", true), {2, 5, 3, 2}, 1e-4},
        LayerCase{"deconv_s1", LayerSpec::conv_transpose("d", 3, 2, 1, 0, 0), {2, 3, 2, 3}, 1e-4},
        LayerCase{"deconv_s2_crop", LayerSpec::conv_transpose("d", 3, 2, 2, 6, 3), {2, 3, 2, 3}, 1e-4},
        LayerCase{"dense", LayerSpec::dense("d", 6, 4), {3, 6}, 1e-4},
        LayerCase{"batchnorm", LayerSpec::batchnorm("bn", 4), {8, 4}, 1e-3},
        LayerCase{"batchnorm_eval", LayerSpec::batchnorm("bn", 4), {8, 4}, 1e-4, Mode::eval},
        LayerCase{"sigmoid", LayerSpec::simple(LayerKind::sigmoid, "s"), {4, 5}, 1e-4},
        LayerCase{"softmax", LayerSpec::simple(LayerKind::softmax, "s"), {4, 5}, 1e-4},
        LayerCase{"dropout", LayerSpec::dropout("drop", 0.5), {4, 5}, 1e-4},
        LayerCase{"flatten", LayerSpec::simple(LayerKind::flatten, "f"), {2, 3, 2, 2}, 1e-4}),
    [](const auto& info) { return std::string(info.param.label); });

TEST(GradCheck, EpsilonRange) {
  EXPECT_THROW(grad_check(LayerSpec::dense("d", 2, 2), {1, 2}, 1e-2, 1e-4, 0), ConfigError);
  EXPECT_THROW(grad_check(LayerSpec::dense("d", 2, 2), {1, 2}, 1e-8, 1e-4, 0), ConfigError);
}

// ----------------------------------------------------------------- adam

TEST(Adam, FirstStepIsLrTimesSign) {
  Parameter<double> p("p", Tensor<double>({4}, {1, 1, 1, 1}));
  p.grad = Tensor<double>({4}, {0.3, -2.0, 1e-3, -5e-2});
  AdamConfig cfg;
  adam_step<double>({&p}, cfg);
  // m_hat = g and v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps).
  const std::vector<double> g = {0.3, -2.0, 1e-3, -5e-2};
  for (std::size_t i = 0; i < 4; ++i) {
    const double oracle = 1.0 - cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps_hat);
    EXPECT_NEAR(p.value[i], oracle, 1e-12);
    EXPECT_NEAR(std::abs(p.value[i] - 1.0), cfg.lr, 1e-7);
  }
  EXPECT_EQ(p.step_count, 1u);
  for (double v : p.grad.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, ZeroGradAndZeroLrLeaveValues) {
  Parameter<double> p("p", Tensor<double>({3}, {1, 2, 3}));
  adam_step<double>({&p}, {});
  EXPECT_EQ(p.value.vec(), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(p.step_count, 1u);

  p.grad = Tensor<double>({3}, {1, -1, 4});
  AdamConfig frozen;
  frozen.lr = 0.0;
  adam_step<double>({&p}, frozen);
  EXPECT_EQ(p.value.vec(), (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(p.step_count, 2u);
}

TEST(Adam, NonFiniteGradAbortsAndNamesParameter) {
  Parameter<double> a("good", Tensor<double>({1}, {1})), b("bad", Tensor<double>({1}, {1}));
  a.grad[0] = 1.0;
  b.grad[0] = NAN;
  try {
    adam_step<double>({&a, &b}, {});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(a.step_count, 0u);
}

TEST(Adam, MatchesClosedFormOverSteps) {
  Parameter<double> p("p", Tensor<double>({1}, {0.0}));
  AdamConfig cfg;
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 5; ++t) {
    const double g = 0.5 * t - 1.0;
    p.grad[0] = g;
    adam_step<double>({&p}, cfg);
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    x -= cfg.lr * (m / (1 - std::pow(cfg.beta1, t))) / (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.eps_hat);
    EXPECT_NEAR(p.value[0], x, 1e-15);
  }
}
