#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ris/attention.hpp"
#include "ris/checkpoint.hpp"
#include "ris/gradcheck.hpp"
#include "ris/ops.hpp"
#include "ris/optim.hpp"
#include "test_util.hpp"

namespace ris {
namespace {

using testing::random_tensor;
using testing::random_vector;

constexpr double kGradTol = 1e-5;

// Random linear probe of an op output, the scalar the checks differentiate.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return weighted_sum(y, random_vector(y.size(), rng));
}

void expect_gradients(std::function<Tensor()> f, std::vector<Tensor> inputs, std::uint64_t seed = 1) {
  GradCheckOptions opt;
  opt.seed = seed;
  const auto report = finite_difference_check(f, inputs, opt);
  EXPECT_EQ(report.probes.size(), 10u);
  EXPECT_LT(report.max_rel_error, kGradTol);
  EXPECT_TRUE(report.passed);
}

TEST(MatmulTest, IdentityLeavesMatrixUnchanged) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(out[i], a[i]);
}

TEST(MatmulTest, HandComputedProduct) {
  Tensor out = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {1, 1}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out[0], 3.0);
  EXPECT_DOUBLE_EQ(out[1], 7.0);
}

TEST(MatmulTest, InnerDimensionMismatch) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL() << "expected ShapeMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(SoftmaxTest, UniformAndClosedForm) {
  Tensor u = softmax(Tensor({3}, {0, 0, 0}), 0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(u[i], 1.0 / 3.0, 1e-15);
  Tensor t = softmax(Tensor({2}, {std::log(2.0), 0.0}), 0);
  EXPECT_NEAR(t[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(t[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({4, 5}, rng, -20, 20, false);
    Tensor y = softmax(x, 1);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += 7.25;
    Tensor z = softmax(Tensor({4, 5}, shifted), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_GE(y[r * 5 + c], 0.0);
        EXPECT_NEAR(y[r * 5 + c], z[r * 5 + c], 1e-12);
        total += y[r * 5 + c];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(SoftmaxTest, AxisZeroOfMatrix) {
  Tensor y = softmax(Tensor({2, 2}, {0, 5, 0, 5}), 0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 0.5, 1e-15);
  EXPECT_THROW(softmax(Tensor::zeros({2, 2}), 2), Error);
}

TEST(LinearTest, IdentityAndHandExample) {
  Tensor x({2}, {1, 1});
  Tensor out = linear(x, Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {1, -1}));
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  std::mt19937_64 rng(5);
  Tensor y = random_tensor({3, 2}, rng);
  Tensor same = linear(y, Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2}));
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(same[i], y[i]);
  EXPECT_THROW(linear(y, Tensor::zeros({3, 2})), Error);
}

TEST(ElementwiseTest, ProductExamples) {
  Tensor a({2}, {1, 2});
  Tensor ones = Tensor::full({2}, 1.0);
  Tensor same = mul(a, ones);
  EXPECT_DOUBLE_EQ(same[0], 1.0);
  EXPECT_DOUBLE_EQ(same[1], 2.0);
  Tensor p = mul(a, Tensor({2}, {3, 4}));
  EXPECT_DOUBLE_EQ(p[0], 3.0);
  EXPECT_DOUBLE_EQ(p[1], 8.0);
  EXPECT_THROW(mul(a, Tensor::zeros({3})), Error);
  EXPECT_THROW(add(a, Tensor::zeros({2, 1})), Error);
}

TEST(GroupNormTest, ConstantInputNormalisesToZero) {
  Tensor y = group_norm(Tensor::full({4, 3, 3}, 2.5), 2, Tensor::full({4}, 1.0), Tensor::zeros({4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(GroupNormTest, PerGroupStatistics) {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({8, 4, 4}, rng, -3, 5, false);
  Tensor y = group_norm(x, 4);
  const std::size_t per_group = 2 * 16;
  for (std::size_t g = 0; g < 4; ++g) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < per_group; ++i) mean += y[g * per_group + i];
    mean /= per_group;
    for (std::size_t i = 0; i < per_group; ++i) var += std::pow(y[g * per_group + i] - mean, 2);
    var /= per_group;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
}

TEST(GroupNormTest, BadGroupCount) {
  try {
    group_norm(Tensor::zeros({6, 2, 2}), 4);
    FAIL() << "expected BadGroupCount";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadGroupCount);
  }
}

TEST(LayerNormTest, ConstantAndStatistics) {
  Tensor z = layer_norm(Tensor::full({3, 4}, -1.0));
  for (double v : z.data()) EXPECT_DOUBLE_EQ(v, 0.0);
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({5, 16}, rng, -2, 4, false);
  Tensor y = layer_norm(x);
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < 16; ++c) mean += y[r * 16 + c];
    mean /= 16;
    for (std::size_t c = 0; c < 16; ++c) var += std::pow(y[r * 16 + c] - mean, 2);
    var /= 16;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
}

// Independent scalar bilinear sampler (half-pixel centres, edge clamp).
double bilinear_oracle(const std::vector<std::vector<double>>& img, double sy, double sx) {
  const int h = static_cast<int>(img.size()), w = static_cast<int>(img[0].size());
  sy = std::max(sy, 0.0);
  sx = std::max(sx, 0.0);
  const int y0 = std::min(static_cast<int>(std::floor(sy)), h - 1), x0 = std::min(static_cast<int>(std::floor(sx)), w - 1);
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * img[y0][x0] + fx * img[y0][x1]) + fy * ((1 - fx) * img[y1][x0] + fx * img[y1][x1]);
}

TEST(BilinearTest, ConstantAndSinglePixel) {
  Tensor c = bilinear_upsample_2x(Tensor::full({2, 3, 5}, 5.0));
  EXPECT_EQ(c.shape(), (Shape{2, 6, 10}));
  for (double v : c.data()) EXPECT_EQ(v, 5.0);
  Tensor one = bilinear_upsample_2x(Tensor({1, 1, 1}, {-0.75}));
  EXPECT_EQ(one.shape(), (Shape{1, 2, 2}));
  for (double v : one.data()) EXPECT_EQ(v, -0.75);
}

TEST(BilinearTest, MatchesHandTableForTwoByTwo) {
  // f(y, x) = 2y + x sampled at source rows/cols {0, .25, .75, 1}.
  const double expected[4][4] = {{0.0, 0.25, 0.75, 1.0}, {0.5, 0.75, 1.25, 1.5}, {1.5, 1.75, 2.25, 2.5}, {2.0, 2.25, 2.75, 3.0}};
  Tensor y = bilinear_upsample_2x(Tensor({1, 2, 2}, {0, 1, 2, 3}));
  const std::vector<std::vector<double>> img = {{0, 1}, {2, 3}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      EXPECT_NEAR(y[i * 4 + j], expected[i][j], 1e-15);
      EXPECT_NEAR(y[i * 4 + j], bilinear_oracle(img, (i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), 1e-15);
    }
}

TEST(BilinearTest, AgreesWithOracleAtFactorFourAndIsLinear) {
  std::mt19937_64 rng(21);
  Tensor a = random_tensor({1, 3, 4}, rng, -1, 1, false);
  Tensor b = random_tensor({1, 3, 4}, rng, -1, 1, false);
  Tensor ya = bilinear_upsample(a, 4);
  std::vector<std::vector<double>> img(3, std::vector<double>(4));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) img[i][j] = a[i * 4 + j];
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 16; ++j)
      EXPECT_NEAR(ya[i * 16 + j], bilinear_oracle(img, (i + 0.5) / 4 - 0.5, (j + 0.5) / 4 - 0.5), 1e-14);
  Tensor combo = bilinear_upsample_2x(add(scale(a, 2.0), scale(b, -3.0)));
  Tensor sa = bilinear_upsample_2x(a), sb = bilinear_upsample_2x(b);
  for (std::size_t i = 0; i < combo.size(); ++i) EXPECT_NEAR(combo[i], 2 * sa[i] - 3 * sb[i], 1e-14);
}

TEST(ConcatTest, StacksAndSlicesBack) {
  Tensor a({2, 1, 2}, {1, 2, 3, 4});
  Tensor b({2, 1, 2}, {5, 6, 7, 8});
  Tensor c = concat_channels({a, b});
  EXPECT_EQ(c.shape(), (Shape{4, 1, 2}));
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(c[i], a[i]);
    EXPECT_EQ(c[4 + i], b[i]);
  }
  EXPECT_THROW(concat_channels({a, Tensor::zeros({1, 2, 1})}), Error);
}

TEST(StopGradientTest, ValueKeptGradientBlocked) {
  Tensor x({3}, {1, -2, 3}, true);
  Tensor s = stop_gradient(x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s[i], x[i]);
  Tensor loss = sum(s);
  backward(loss);
  EXPECT_FALSE(x.has_grad());
}

TEST(StopGradientTest, CompositeOnlyCarriesUnguardedBranch) {
  // L = sum(x*x) + sum(sg(3x)) : dL/dx = 2x, the guarded branch contributes nothing.
  Tensor x({3}, {0.5, -1.5, 2.0}, true);
  Tensor loss = add(sum(mul(x, x)), sum(stop_gradient(scale(x, 3.0))));
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);

  // Same gradient when the guarded branch is replaced by its constant value.
  Tensor y({3}, {0.5, -1.5, 2.0}, true);
  Tensor c = Tensor({1}, {3 * (0.5 - 1.5 + 2.0)});
  backward(add(sum(mul(y, y)), c));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], y.grad()[i]);
}

TEST(Conv3x3Test, IdentityKernel) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({2, 4, 5}, rng, -1, 1, false);
  std::vector<double> w(2 * 2 * 9, 0.0);
  w[(0 * 2 + 0) * 9 + 4] = 1.0;
  w[(1 * 2 + 1) * 9 + 4] = 1.0;
  Tensor y = conv3x3(x, Tensor({2, 2, 3, 3}, w), Tensor::zeros({2}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv3x3Test, AveragingKernelByHand) {
  Tensor x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor y = conv3x3(x, Tensor::full({1, 1, 3, 3}, 1.0 / 9.0));
  const double expected[9] = {12, 21, 16, 27, 45, 33, 24, 39, 28};
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(y[i], expected[i] / 9.0, 1e-14);
  EXPECT_THROW(conv3x3(x, Tensor::zeros({1, 2, 3, 3})), Error);
}

TEST(CrossEntropyTest, ClosedFormsAndShapes) {
  std::vector<std::uint8_t> target = {1, 0, 1, 1};
  Tensor uniform = Tensor::zeros({2, 2, 2});
  EXPECT_NEAR(cross_entropy_2class(uniform, target).item(), std::log(2.0), 1e-15);
  std::vector<double> confident(8);
  for (int i = 0; i < 4; ++i) {
    confident[i] = target[i] ? -6.0 : 6.0;
    confident[4 + i] = target[i] ? 6.0 : -6.0;
  }
  EXPECT_LT(cross_entropy_2class(Tensor({2, 2, 2}, confident), target).item(), 0.01);
  EXPECT_THROW(cross_entropy_2class(Tensor::zeros({2, 3, 2}), target), Error);
  EXPECT_THROW(cross_entropy_2class(Tensor::zeros({3, 2, 2}), target), Error);
}

// Every differentiable op, 10 random coordinate probes each.
class OpGradientTest : public ::testing::TestWithParam<int> {};

TEST_P(OpGradientTest, MatchesFiniteDifferences) {
  const auto seed = static_cast<std::uint64_t>(GetParam());
  std::mt19937_64 rng(seed * 7919 + 13);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({2}, rng);
  Tensor fmap = random_tensor({4, 3, 5}, rng);
  Tensor fmap2 = random_tensor({2, 3, 5}, rng);
  Tensor gamma = random_tensor({4}, rng, 0.5, 1.5);
  Tensor beta = random_tensor({4}, rng);
  Tensor kernel = random_tensor({3, 4, 3, 3}, rng);
  Tensor kbias = random_tensor({3}, rng);
  Tensor logits = random_tensor({2, 3, 4}, rng, -3, 3);
  std::vector<std::uint8_t> target(12);
  for (auto& t : target) t = rng() & 1u;

  expect_gradients([&] { return probe(matmul(a, b), seed); }, {a, b}, seed);
  expect_gradients([&] { return probe(linear(a, b, bias), seed); }, {a, b, bias}, seed);
  expect_gradients([&] { return probe(mul(a, c), seed); }, {a, c}, seed);
  expect_gradients([&] { return probe(add(a, c), seed); }, {a, c}, seed);
  expect_gradients([&] { return probe(sub(a, c), seed); }, {a, c}, seed);
  expect_gradients([&] { return probe(relu(a), seed); }, {a}, seed);
  expect_gradients([&] { return probe(gelu(a), seed); }, {a}, seed);
  expect_gradients([&] { return probe(softmax(a, 1), seed); }, {a}, seed);
  expect_gradients([&] { return probe(softmax(fmap, 0), seed); }, {fmap}, seed);
  expect_gradients([&] { return probe(layer_norm(a, gamma, beta), seed); }, {a, gamma, beta}, seed);
  expect_gradients([&] { return probe(group_norm(fmap, 2, gamma, beta), seed); }, {fmap, gamma, beta}, seed);
  expect_gradients([&] { return probe(bilinear_upsample_2x(fmap), seed); }, {fmap}, seed);
  expect_gradients([&] { return probe(bilinear_upsample(fmap2, 4), seed); }, {fmap2}, seed);
  expect_gradients([&] { return probe(concat_channels({fmap, fmap2}), seed); }, {fmap, fmap2}, seed);
  expect_gradients([&] { return probe(conv3x3(fmap, kernel, kbias), seed); }, {fmap, kernel, kbias}, seed);
  expect_gradients([&] { return cross_entropy_2class(logits, target); }, {logits}, seed);
  expect_gradients([&] { return probe(transpose(a), seed); }, {a}, seed);
  expect_gradients([&] { return probe(patch_merge(chw_to_tokens(fmap2), 3, 5, 1), seed); }, {fmap2}, seed);
  expect_gradients([&] { return mse_loss(a, c.data()); }, {a}, seed);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradientTest, ::testing::Range(1, 11));

TEST(BackwardTest, ChainOfTwoLinears) {
  std::mt19937_64 rng(31);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w1 = random_tensor({3, 5}, rng), b1 = random_tensor({5}, rng);
  Tensor w2 = random_tensor({5, 2}, rng), b2 = random_tensor({2}, rng);
  expect_gradients([&] { return probe(linear(gelu(linear(x, w1, b1)), w2, b2), 2); }, {x, w1, b1, w2, b2});
}

TEST(BackwardTest, FrozenParameterStaysZero) {
  ParameterStore store(1);
  Tensor w = store.add("w", {2, 2}, Init::uniform(1.0));
  Tensor frozen = store.add("frozen.w", {2, 2}, Init::uniform(1.0));
  store.freeze("frozen.");
  Tensor x({1, 2}, {1.0, 2.0});
  backward(sum(linear(linear(x, frozen), w)));
  EXPECT_TRUE(w.has_grad());
  EXPECT_FALSE(frozen.has_grad());
  EXPECT_TRUE(store.find("frozen.w")->frozen);
}

TEST(BackwardTest, SecondBackwardIsStale) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  try {
    backward(loss);
    FAIL() << "expected StaleTape";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StaleTape);
  }
}

TEST(BackwardTest, NonScalarLoss) {
  Tensor x({2}, {1.0, 2.0}, true);
  try {
    backward(mul(x, x));
    FAIL() << "expected NotScalar";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotScalar);
  }
}

TEST(TensorTest, NonFiniteValuesAreRejected) {
  try {
    Tensor t({2}, {1.0, std::nan("")});
    FAIL() << "expected NonFinite";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_THROW(scale(Tensor({1}, {1e300}), 1e300), Error);
}

TEST(AdamWTest, SingleScalarStepByHand) {
  ParameterStore store;
  Tensor p = store.add("p", {1}, Init::constant(1.0));
  p.mutable_grad()[0] = 0.5;
  AdamW opt(store, {.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.01});
  opt.step();
  // m̂ = 0.5, v̂ = 0.25 -> p = 1 * (1 - 0.1*0.01) - 0.1 * 0.5 / (0.5 + 1e-8)
  EXPECT_NEAR(p[0], 0.999 - 0.05 / 0.50000001, 1e-15);
}

TEST(AdamWTest, ZeroLearningRateAndFrozenSkip) {
  ParameterStore store(2);
  Tensor p = store.add("p", {3}, Init::uniform(1.0));
  Tensor f = store.add("f.w", {3}, Init::uniform(1.0));
  store.freeze("f.");
  const std::vector<double> before_p(p.data().begin(), p.data().end());
  const std::vector<double> before_f(f.data().begin(), f.data().end());
  for (auto& g : p.mutable_grad()) g = 1.0;
  AdamW zero(store, {.lr = 0.0});
  zero.step();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(p[i], before_p[i]);
  AdamW opt(store, {.lr = 0.1});
  opt.step();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NE(p[i], before_p[i]);
    EXPECT_EQ(f[i], before_f[i]);
  }
}

TEST(AdamWTest, StateMismatch) {
  ParameterStore store;
  store.add("p", {2}, Init::constant(0.0));
  AdamW opt(store, {});
  try {
    opt.restore(3, {});
    FAIL() << "expected StateMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StateMismatch);
  }
}

TEST(GradCheckTest, QuadraticFormPasses) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 4}, rng);
  Tensor m = random_tensor({4, 4}, rng, -1, 1, false);
  auto report = finite_difference_check([&] { return sum(mul(matmul(x, m), x)); }, {x}, {.tolerance = 1e-6});
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-6);
}

TEST(GradCheckTest, WrongGradientIsCaught) {
  Tensor x({3}, {0.3, -0.7, 1.1}, true);
  // Value x^2, deliberately wrong tape derivative x.
  auto broken_square = [](const Tensor& in) {
    std::vector<double> v(in.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = in[i] * in[i];
    return detail::make_result("broken_square", in.shape(), std::move(v), {in}, [](detail::Node& self) {
      const auto& xv = detail::parent_value(self, 0);
      if (double* g = detail::parent_grad(self, 0))
        for (std::size_t i = 0; i < xv.size(); ++i) g[i] += xv[i] * self.grad[i];
    });
  };
  auto report = finite_difference_check([&] { return sum(broken_square(x)); }, {x});
  EXPECT_FALSE(report.passed);
  EXPECT_GT(report.max_rel_error, 0.1);
}

TEST(GradCheckTest, ReluKinkIsExcluded) {
  Tensor x({2}, {0.0, 0.0}, true);
  auto report = finite_difference_check([&] { return sum(relu(x)); }, {x}, {.probes = 5});
  EXPECT_TRUE(report.probes.empty());
  EXPECT_GT(report.skipped_kinks, 0u);
  EXPECT_FALSE(report.passed);
}

TEST(CheckpointTest, BitExactRoundTrip) {
  ParameterStore store(99);
  store.add("a.weight", {3, 4}, Init::normal(1.0));
  store.add("b.bias", {5}, Init::uniform(1e-300));
  store.add("frozen.x", {2, 1, 3}, Init::normal(1e10));
  store.freeze("frozen.");
  Checkpoint ckpt;
  ckpt.meta["note"] = "unit";
  capture_parameters(store, ckpt);
  const auto path = std::filesystem::temp_directory_path() / "ris_ckpt_roundtrip.bin";
  write_checkpoint(path, ckpt);
  Checkpoint back = read_checkpoint(path);
  ASSERT_EQ(back.tensors.size(), 3u);
  EXPECT_EQ(back.meta["note"], "unit");
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].name, ckpt.tensors[i].name);
    EXPECT_EQ(back.tensors[i].shape, ckpt.tensors[i].shape);
    EXPECT_EQ(back.tensors[i].frozen, ckpt.tensors[i].frozen);
    EXPECT_EQ(0, std::memcmp(back.tensors[i].data.data(), ckpt.tensors[i].data.data(),
                             ckpt.tensors[i].data.size() * sizeof(double)));
  }
  ParameterStore other(5);
  other.add("a.weight", {3, 4}, Init::constant(0));
  other.add("b.bias", {5}, Init::constant(0));
  other.add("frozen.x", {2, 1, 3}, Init::constant(0));
  restore_parameters(other, back);
  EXPECT_EQ(other.find("a.weight")->tensor[7], store.find("a.weight")->tensor[7]);
  EXPECT_THROW(read_checkpoint(path.string() + ".missing"), Error);
  std::filesystem::remove(path);
}

TEST(ParameterStoreTest, SeededInitIsBitIdentical) {
  ParameterStore a(42), b(42);
  Tensor ta = a.add("w", {10}, Init::normal(0.3));
  Tensor tb = b.add("w", {10}, Init::normal(0.3));
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ta[i], tb[i]);
  EXPECT_EQ(a.census(), 10u);
}

}  // namespace
}  // namespace ris
