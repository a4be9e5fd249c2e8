#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lensformer/ops.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace lensformer;
using lensformer::testing::check_gradients;
using lensformer::testing::random_tensor;


TEST(Tensor, ShapeInvariant) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> m({2, 2}, {1.5, -2, 3, 7});
  auto r = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r[i], m[i]);

  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2, 1}, {5, 6});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17);
  EXPECT_EQ(c[1], 39);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor<double> a({2, 3}), b({2, 3});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
}

TEST(Matmul, BatchedBroadcastMatchesLoop) {
  std::mt19937_64 rng(3);
  auto a = random_tensor<double>({3, 4, 5}, rng);
  auto b = random_tensor<double>({1, 5, 2}, rng);
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 4, 2}));
  for (std::size_t bi = 0; bi < 3; ++bi) {
    std::vector<double> av(a.raw() + bi * 20, a.raw() + bi * 20 + 20), bv(b.raw(), b.raw() + 10);
    auto ref = lensformer::testing::naive_matmul(av, bv, 4, 5, 2);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(c[bi * 8 + i], ref[i]);
  }
}

TEST(Matmul, GradientOfSumIsTransposeBroadcast) {
  std::mt19937_64 rng(11);
  auto a = random_tensor<double>({3, 4}, rng).set_requires_grad();
  auto b = random_tensor<double>({4, 5}, rng);
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < 4; ++p) {
      double row = 0;
      for (std::size_t j = 0; j < 5; ++j) row += b[p * 5 + j];
      EXPECT_NEAR(a.grad()[i * 4 + p], row, 1e-12);
    }
  auto g = check_gradients({a, b}, [&] { return sum(matmul(a, b)); });
  EXPECT_LT(g.max_rel_err, 1e-6);
}

TEST(Conv2d, IdentityAndSummationKernels) {
  std::mt19937_64 rng(1);
  auto x = random_tensor<double>({1, 3, 3}, rng);
  Tensor<double> one({1, 1, 1, 1}, {1.0});
  auto y = conv2d(x, one, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], x[i]);

  Tensor<double> ones({1, 3, 3}, 1.0);
  Tensor<double> k({1, 1, 3, 3}, 1.0);
  auto s = conv2d(ones, k, 1, 0);
  ASSERT_EQ(s.shape(), (Shape{1, 1, 1}));
  EXPECT_EQ(s[0], 9.0);
}

TEST(Conv2d, MatchesNaiveLoopsBitForBit) {
  std::mt19937_64 rng(5);
  for (std::size_t trial = 0; trial < 40; ++trial) {
    std::uniform_int_distribution<std::size_t> ext(1, 4), side(3, 16), ks(1, 3), st(1, 2), pd(0, 1);
    const std::size_t ci = ext(rng), co = ext(rng), h = side(rng), w = side(rng), kh = ks(rng), kw = ks(rng);
    const std::size_t stride = st(rng), pad = pd(rng);
    auto x = random_tensor<double>({ci, h, w}, rng);
    auto k = random_tensor<double>({co, ci, kh, kw}, rng);
    auto got = conv2d(x, k, stride, pad);
    auto ref = lensformer::testing::naive_conv2d(x, k, stride, pad);
    ASSERT_EQ(got.shape(), ref.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) ASSERT_EQ(got[i], ref[i]) << "trial " << trial;
  }
  auto x = random_tensor<double>({2, 8, 8}, rng);
  auto k = random_tensor<double>({4, 2, 3, 3}, rng);
  auto got = conv2d(x, k, 1, 1);
  auto ref = lensformer::testing::naive_conv2d(x, k, 1, 1);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], ref[i]);
}

TEST(Conv2d, Errors) {
  Tensor<double> x({1, 3, 3});
  Tensor<double> big({1, 1, 5, 5});
  EXPECT_THROW(conv2d(x, big, 1, 0), DimensionError);
  EXPECT_NO_THROW(conv2d(x, big, 1, 1));
  Tensor<double> wrong({1, 2, 3, 3});
  EXPECT_THROW(conv2d(x, wrong, 1, 1), DimensionError);
  EXPECT_THROW(conv2d(x, Tensor<double>({1, 1, 3, 3}), 0, 0), ContractError);
}

TEST(Conv2d, BatchedEqualsPerImage) {
  std::mt19937_64 rng(8);
  auto x = random_tensor<double>({3, 2, 7, 7}, rng);
  auto k = random_tensor<double>({4, 2, 3, 3}, rng);
  auto y = conv2d(x, k, 2, 1);
  for (std::size_t b = 0; b < 3; ++b) {
    Tensor<double> xi({2, 7, 7}, std::vector<double>(x.raw() + b * 98, x.raw() + (b + 1) * 98));
    auto yi = conv2d(xi, k, 2, 1);
    for (std::size_t i = 0; i < yi.numel(); ++i) EXPECT_EQ(y[b * yi.numel() + i], yi[i]);
  }
}

TEST(Elu, Values) {
  Tensor<double> x({3}, {0.0, 2.5, -1.0});
  auto y = elu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.5);
  EXPECT_NEAR(y[2], std::exp(-1.0) - 1.0, 1e-15);
  EXPECT_NEAR(y[2], -0.6321, 1e-4);
}

TEST(Softmax, ValuesAndStability) {
  auto a = softmax(Tensor<double>({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a[i], 1.0 / 3.0, 1e-15);
  auto b = softmax(Tensor<double>({3}, {1000, 0, 0}));
  EXPECT_NEAR(b[0], 1.0, 1e-12);
  EXPECT_TRUE(std::isfinite(b[1]));
  auto c = softmax(Tensor<double>({3}, {1, 2, 3}));
  EXPECT_NEAR(c[0], 0.09003, 1e-5);
  EXPECT_NEAR(c[1], 0.24473, 1e-5);
  EXPECT_NEAR(c[2], 0.66524, 1e-5);
}

TEST(Softmax, RowsSumToOneOverWideRange) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({4, 7, 5}, rng, -1e3, 1e3);
    for (long axis : {0L, 1L, 2L}) {
      auto y = softmax(x, axis);
      const std::size_t ax = static_cast<std::size_t>(axis);
      const std::size_t len = x.dim(ax);
      std::size_t inner = 1;
      for (std::size_t d = ax + 1; d < 3; ++d) inner *= x.dim(d);
      const std::size_t outer = x.numel() / (len * inner);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
          double s = 0;
          for (std::size_t j = 0; j < len; ++j) {
            const double v = y[o * len * inner + j * inner + in];
            ASSERT_GE(v, 0.0);
            s += v;
          }
          ASSERT_NEAR(s, 1.0, 1e-6);
        }
    }
  }
}

TEST(Dense, ShiftCaseAndNaiveOracle) {
  Tensor<double> x({2}, {1, 1});
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  auto y0 = dense(x, eye, Tensor<double>({2}, 0.0));
  EXPECT_EQ(y0[0], 1.0);
  EXPECT_EQ(y0[1], 1.0);
  auto y1 = dense(Tensor<double>({2}, {2, 3}), eye, Tensor<double>({2}, 1.0));
  EXPECT_EQ(y1[0], 3.0);
  EXPECT_EQ(y1[1], 4.0);

  std::mt19937_64 rng(9);
  auto xr = random_tensor<double>({5, 7}, rng);
  auto w = random_tensor<double>({7, 3}, rng);
  auto b = random_tensor<double>({3}, rng);
  auto got = dense(xr, w, b);
  auto ref = lensformer::testing::naive_dense(xr, w, b);
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_EQ(got[i], ref[i]);
  EXPECT_THROW(dense(xr, b, b), DimensionError);
}

TEST(Misc, SigmoidBceLayerNorm) {
  EXPECT_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
  const double eps = kBceEpsilon;
  EXPECT_NEAR(binary_cross_entropy(Tensor<double>::scalar(1 - eps), Tensor<double>::scalar(1.0)).item(), 0.0, 1e-6);
  // Clamping keeps the loss finite at the extremes.
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(Tensor<double>::scalar(0.0), Tensor<double>::scalar(1.0)).item()));
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(Tensor<float>::scalar(1.0f), Tensor<float>::scalar(0.0f)).item()));

  Tensor<double> c({2, 4}, 3.25);
  auto z = layer_norm(c, Tensor<double>({4}, 1.0), Tensor<double>({4}, 0.0));
  for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(z[i], 0.0);

  // Sigmoid stays strictly inside (0,1) even where float rounding would hit 1.
  auto s = sigmoid(Tensor<float>({2}, {40.0f, -200.0f}));
  EXPECT_LT(s[0], 1.0f);
  EXPECT_GT(s[1], 0.0f);
}

TEST(Backward, SimpleLosses) {
  std::mt19937_64 rng(4);
  auto w = random_tensor<double>({3, 2}, rng).set_requires_grad();
  backward(sum(w));
  for (auto g : w.grad()) EXPECT_EQ(g, 1.0);
  w.zero_grad();
  backward(scale(sum(mul(w, w)), 0.5));
  for (std::size_t i = 0; i < w.numel(); ++i) EXPECT_DOUBLE_EQ(w.grad()[i], w[i]);
  EXPECT_TRUE(Tape<double>::current().empty());
}

TEST(Backward, Contract) {
  auto w = Tensor<double>({3}, 1.0).set_requires_grad();
  auto y = scale(w, 2.0);
  EXPECT_THROW(backward(y), ContractError);
  Tape<double>::current().clear();
  EXPECT_THROW(backward(Tensor<double>::scalar(1.0)), ContractError);
}

TEST(Gradients, EveryOpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (auto& c : lensformer::testing::op_gradient_cases(seed)) {
      auto r = check_gradients(c.params, c.loss);
      EXPECT_LT(r.max_rel_err, c.tolerance) << c.name << " seed " << seed;
      EXPECT_GT(r.checked, 0u) << c.name;
    }
}

TEST(Determinism, SameInputsSameOutputsAndGradients) {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = random_tensor<float>({2, 3, 8, 8}, rng);
    auto k = random_tensor<float>({4, 3, 3, 3}, rng).set_requires_grad();
    auto y = sum(elu(conv2d(x, k, 1, 1)));
    backward(y);
    return std::make_pair(y.item(), std::vector<float>(k.grad().begin(), k.grad().end()));
  };
  auto r1 = run(), r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}
