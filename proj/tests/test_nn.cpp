#include <gtest/gtest.h>

#include <cmath>

#include "mdbn/autograd.hpp"
#include "mdbn/nn_ops.hpp"
#include "test_util.hpp"

using namespace mdbn;
using mdbn::testing::grad_check;
using mdbn::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 10;

}  // namespace

TEST(Tensor, ShapeMismatchThrows) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 3}).reshaped({4, 2}), ShapeError);
  EXPECT_THROW(mean_f64(Tensor<float>()), ShapeError);
}

TEST(Autograd, ElementwiseGradients) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto a = random_tensor<double>({2, 3, 4}, 100 + seed);
    const auto b = random_tensor<double>({2, 3, 4}, 200 + seed);
    const auto c = random_tensor<double>({2, 3, 4}, 300 + seed);
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return sum(mul(sub(add(v[0], v[1]), v[2]), v[0]));
    };
    EXPECT_LT(grad_check(build, {a, b, c}).worst_relative, kGradTol) << "seed " << seed;
  }
}

TEST(Autograd, MeanAbsErrorGradient) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto a = random_tensor<double>({2, 3, 5, 5}, 10 + seed);
    const auto b = random_tensor<double>({2, 3, 5, 5}, 20 + seed);
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return mean_abs_error(v[0], v[1]);
    };
    EXPECT_LT(grad_check(build, {a, b}).worst_relative, kGradTol) << "seed " << seed;
  }
}

TEST(Autograd, MeanAbsErrorValue) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>({4}, std::vector<float>{0, 1, 2, 3}));
  auto b = tape.constant(Tensor<float>({4}, std::vector<float>{1, 1, 0, 3}));
  EXPECT_FLOAT_EQ(mean_abs_error(a, b).value()[0], 0.75f);
  Tensor<float> z({16, 3, 4, 4});
  EXPECT_EQ(mean_abs_error_value(z, z), 0.0);
}

TEST(Autograd, BackwardTwiceThrows) {
  Tape<double> tape;
  auto x = tape.parameter(random_tensor<double>({3}, 1));
  auto loss = sum(mul(x, x));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), AutogradError);
}

TEST(Autograd, NonScalarLossThrows) {
  Tape<double> tape;
  auto x = tape.parameter(random_tensor<double>({3}, 1));
  EXPECT_THROW(tape.backward(mul(x, x)), AutogradError);
}

TEST(Autograd, SharedInputAccumulates) {
  Tape<double> tape;
  auto x = tape.parameter(Tensor<double>({2}, std::vector<double>{1.5, -2.0}));
  auto loss = sum(add(mul(x, x), x));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 4.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], -3.0);
}

TEST(Conv2d, DirectMatchesIm2col) {
  for (std::size_t k : {1u, 3u, 5u}) {
    const auto x = random_tensor<double>({2, 5, 9, 7}, k);
    const auto w = random_tensor<double>({4, 5, k, k}, k + 10);
    const auto b = random_tensor<double>({4}, k + 20);
    const auto y1 = conv2d_forward(x, w, b, ConvAlgorithm::direct);
    const auto y2 = conv2d_forward(x, w, b, ConvAlgorithm::im2col);
    ASSERT_EQ(y1.shape(), (Shape{2, 4, 9, 7}));
    for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-12);

    const auto gy = random_tensor<double>(y1.shape(), k + 30);
    const auto g1 = conv2d_backward(x, w, gy, true, ConvAlgorithm::direct);
    const auto g2 = conv2d_backward(x, w, gy, true, ConvAlgorithm::im2col);
    for (std::size_t i = 0; i < g1.input.numel(); ++i) EXPECT_NEAR(g1.input[i], g2.input[i], 1e-11);
    for (std::size_t i = 0; i < g1.weight.numel(); ++i) EXPECT_NEAR(g1.weight[i], g2.weight[i], 1e-11);
    for (std::size_t i = 0; i < g1.bias.numel(); ++i) EXPECT_NEAR(g1.bias[i], g2.bias[i], 1e-11);
  }
}

TEST(Conv2d, KnownValue) {
  // 3x3 all-ones kernel over an all-ones 3x3 image with zero padding.
  Tensor<double> x({1, 1, 3, 3}, 1.0);
  Tensor<double> w({1, 1, 3, 3}, 1.0);
  Tensor<double> b({1}, 0.5);
  const auto y = conv2d_forward(x, w, b, ConvAlgorithm::direct);
  const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i] + 0.5);
}

TEST(Conv2d, ShapeErrors) {
  Tensor<float> x({1, 3, 8, 8});
  Tensor<float> w({4, 2, 3, 3});
  Tensor<float> b({4});
  EXPECT_THROW(conv2d_forward(x, w, b), ShapeError);
  EXPECT_THROW(conv2d_forward(x, Tensor<float>({4, 3, 3, 3}), Tensor<float>({5})), ShapeError);
}

TEST(Conv2d, GradientBothAlgorithms) {
  for (ConvAlgorithm algo : {ConvAlgorithm::direct, ConvAlgorithm::im2col}) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      const std::size_t k = seed % 2 == 0 ? 3 : 5;
      const auto x = random_tensor<double>({2, 3, 6, 5}, 40 + seed);
      const auto w = random_tensor<double>({2, 3, k, k}, 50 + seed);
      const auto b = random_tensor<double>({2}, 60 + seed);
      const auto t = random_tensor<double>({2, 2, 6, 5}, 70 + seed);
      auto build = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
        return mean_abs_error(conv2d(v[0], v[1], v[2], algo), tape.constant(t));
      };
      EXPECT_LT(grad_check(build, {x, w, b}).worst_relative, kGradTol)
          << to_string(algo) << " seed " << seed;
    }
  }
}

TEST(Gelu, ReferenceValues) {
  Tensor<double> x({3}, std::vector<double>{1.0, 0.0, -1.0});
  const auto y = gelu_forward(x);
  EXPECT_NEAR(y[0], 0.841344746, 1e-9);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], -0.158655254, 1e-9);
}

TEST(Gelu, TailsStayAccurate) {
  Tensor<double> x({2}, std::vector<double>{-10.0, 10.0});
  const auto y = gelu_forward(x);
  // x * Phi(x) at x = -10 is about -7.62e-23; a 1 + erf form cancels to 0.
  EXPECT_LT(y[0], 0.0);
  EXPECT_NEAR(y[0] / -7.6198530241605e-23, 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(y[1], 10.0);
}

TEST(Gelu, MonotoneAwayFromItsMinimum) {
  // GELU has a single minimum near -0.7518 and is monotone on either side.
  constexpr double x_min = -0.7517915241;
  Tensor<double> x({12001});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = -6.0 + 12.0 * static_cast<double>(i) / 12000.0;
  const auto y = gelu_forward(x);
  for (std::size_t i = 1; i < x.numel(); ++i) {
    if (x[i] <= x_min) {
      EXPECT_LE(y[i], y[i - 1]) << x[i];
    }
    if (x[i - 1] >= x_min) {
      EXPECT_GE(y[i], y[i - 1]) << x[i];
    }
  }
  Tensor<double> at({1}, x_min);
  EXPECT_NEAR(gelu_backward(at, Tensor<double>({1}, 1.0))[0], 0.0, 1e-9);
}

TEST(Gelu, Gradient) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto x = random_tensor<double>({3, 4, 5}, 80 + seed, -4.0, 4.0);
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return sum(mul(gelu(v[0]), v[0]));
    };
    EXPECT_LT(grad_check(build, {x}).worst_relative, kGradTol) << "seed " << seed;
  }
}

TEST(LeakyRelu, ValuesAndGradient) {
  Tensor<double> x({2}, std::vector<double>{-2.0, 3.0});
  const auto y = leaky_relu_forward(x, 0.01);
  EXPECT_DOUBLE_EQ(y[0], -0.02);
  EXPECT_DOUBLE_EQ(y[1], 3.0);
  EXPECT_THROW(leaky_relu_forward(x, 0.0), std::invalid_argument);
  EXPECT_THROW(leaky_relu_forward(x, 1.0), std::invalid_argument);
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto in = random_tensor<double>({4, 5}, 90 + seed);
    auto build = [](Tape<double>&, const std::vector<Var<double>>& v) {
      return sum(mul(leaky_relu(v[0], 0.2), v[0]));
    };
    EXPECT_LT(grad_check(build, {in}).worst_relative, kGradTol) << "seed " << seed;
  }
}

TEST(PixelShuffle, FrozenLayout) {
  Tensor<float> x({1, 4, 2, 2});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i + 1);
  const auto y = pixel_shuffle_forward(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
  const float expect[16] = {1, 5, 2, 6, 9, 13, 10, 14, 3, 7, 4, 8, 11, 15, 12, 16};
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(y[i], expect[i]) << i;
}

TEST(PixelShuffle, RoundTripIsBitExact) {
  for (std::size_t r : {2u, 3u, 4u}) {
    const auto x = random_tensor<float>({2, 3 * r * r, 5, 4}, r);
    const auto y = pixel_shuffle_forward(x, r);
    EXPECT_EQ(y.shape(), (Shape{2, 3, 5 * r, 4 * r}));
    EXPECT_TRUE(pixel_unshuffle_forward(y, r) == x) << "r=" << r;
    const auto z = random_tensor<float>({1, 2, 3 * r, 2 * r}, 10 + r);
    EXPECT_TRUE(pixel_shuffle_forward(pixel_unshuffle_forward(z, r), r) == z) << "r=" << r;
  }
}

TEST(PixelShuffle, ChannelCountMustDivide) {
  EXPECT_THROW(pixel_shuffle_forward(Tensor<float>({1, 6, 2, 2}), 2), ShapeError);
  EXPECT_THROW(pixel_unshuffle_forward(Tensor<float>({1, 1, 5, 4}), 2), ShapeError);
}

TEST(PixelShuffle, Gradient) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto x = random_tensor<double>({1, 8, 3, 2}, 110 + seed);
    const auto w = random_tensor<double>({1, 2, 6, 4}, 120 + seed);
    auto build = [&](Tape<double>& tape, const std::vector<Var<double>>& v) {
      return sum(mul(pixel_shuffle(v[0], 2), tape.constant(w)));
    };
    EXPECT_LT(grad_check(build, {x}).worst_relative, kGradTol) << "seed " << seed;
  }
}

TEST(InitConv, DeterministicAndBounded) {
  const auto a = init_conv<float>(8, 4, 3, 7);
  const auto b = init_conv<float>(8, 4, 3, 7);
  EXPECT_TRUE(a.weight == b.weight);
  const float bound = std::sqrt(1.0f / (4 * 9));
  for (float v : a.weight.data()) EXPECT_LE(std::abs(v), bound);
  for (float v : a.bias.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_FALSE(init_conv<float>(8, 4, 3, 8).weight == a.weight);
}
