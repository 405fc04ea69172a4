// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "modasr/ops.hpp"

namespace modasr {
namespace {

using testing::random_tensor;

std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

TEST(Tensor, ShapeAndDataAgree) {
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
}

TEST(Elementwise, AddVectors) {
  Tensor<double> a({2}, {1, 2}), b({2}, {3, 4});
  EXPECT_EQ(vec(add(a, b)), (std::vector<double>{4, 6}));
}

TEST(Elementwise, MulByZeroAnnihilates) {
  Tensor<double> x({3}, {1.5, -2, 7}, true);
  Tensor<double> z({3}, 0.0);
  auto y = mul(x, z);
  EXPECT_EQ(vec(y), (std::vector<double>{0, 0, 0}));
  sum(y).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{0, 0, 0}));
}

TEST(Elementwise, SwishFixedPointAtZero) {
  Tensor<double> x({1}, {0.0});
  EXPECT_EQ(swish(x).item(), 0.0);
}

TEST(Elementwise, BroadcastRowAndScalar) {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> row({3}, {10, 20, 30});
  Tensor<double> s({1}, {2});
  EXPECT_EQ(vec(add(a, row)), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(vec(mul(a, s)), (std::vector<double>{2, 4, 6, 8, 10, 12}));
  Tensor<double> col({2, 1}, {1, -1});
  EXPECT_EQ(vec(mul(a, col)), (std::vector<double>{1, 2, 3, -4, -5, -6}));
}

TEST(Elementwise, MismatchNamesBothShapes) {
  Tensor<double> a({2, 3}), b({4});
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Matmul, IdentityAndHandProduct) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1}), m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(matmul(eye, m)), vec(m));
  Tensor<double> r({1, 2}, {1, 0}), c({2, 1}, {2, 3});
  EXPECT_EQ(vec(matmul(r, c)), (std::vector<double>{2}));
  EXPECT_THROW(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), ShapeError);
}

TEST(Matmul, RandomBackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  auto w = random_tensor<double>({3, 2}, rng, -1, 1, false);
  const auto r = testing::grad_check<double>({a, b}, [&] { return sum(mul(matmul(a, b), w)); });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Matmul, CountsMacs) {
  mac::Scope s;
  matmul(Tensor<float>({3, 4}), Tensor<float>({4, 5}));
  EXPECT_EQ(s.count(), 60u);
  mac::Scope s2;
  add(Tensor<float>({3, 4}), Tensor<float>({3, 4}));
  EXPECT_EQ(s2.count(), 0u);
}

TEST(Softmax, SymmetricAndStable) {
  Tensor<double> z({2}, {0, 0}), big({2}, {1000, 1000});
  EXPECT_EQ(vec(softmax(z, 0)), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(vec(softmax(big, 0)), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(softmax(z, 3), ShapeError);
}

TEST(Softmax, SumsToOneAlongAxis) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 100; ++i) {
    auto x = random_tensor<float>({3, 7}, rng, -50, 50, false);
    for (int axis : {0, 1}) {
      auto y = softmax(x, axis);
      const std::size_t outer = axis == 0 ? 7 : 3, inner = axis == 0 ? 3 : 7;
      for (std::size_t o = 0; o < outer; ++o) {
        double s = 0;
        for (std::size_t k = 0; k < inner; ++k) s += axis == 0 ? y.at(k * 7 + o) : y.at(o * 7 + k);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Layernorm, ConstantRowAndZeroGain) {
  Tensor<double> x({1, 4}, {3, 3, 3, 3});
  Tensor<double> g({4}, 1.0), b({4}, 0.0);
  for (double v : vec(layernorm(x, g, b))) EXPECT_EQ(v, 0.0);
  Tensor<double> g0({4}, 0.0), beta({4}, {1, 2, 3, 4});
  std::mt19937_64 rng(1);
  EXPECT_EQ(vec(layernorm(random_tensor<double>({2, 4}, rng), g0, beta)),
            (std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4}));
  EXPECT_THROW(layernorm(x, Tensor<double>({3}, 1.0), b), ShapeError);
}

TEST(Layernorm, NormalizedStatistics) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    auto x = random_tensor<double>({4, 16}, rng, -10, 10, false);
    auto y = layernorm(x, Tensor<double>({16}, 1.0), Tensor<double>({16}, 0.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double m = 0, v = 0;
      for (std::size_t k = 0; k < 16; ++k) m += y.at(r * 16 + k);
      m /= 16;
      for (std::size_t k = 0; k < 16; ++k) v += (y.at(r * 16 + k) - m) * (y.at(r * 16 + k) - m);
      v /= 16;
      EXPECT_LT(std::abs(m), 1e-5);
      EXPECT_NEAR(v, 1.0, 1e-4);
    }
  }
}

TEST(Conv1d, IdentityKernelAndHandSum) {
  std::mt19937_64 rng(4);
  auto x = random_tensor<double>({5, 3}, rng, -1, 1, false);
  Tensor<double> eye({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(vec(conv1d(x, eye, 1, Padding::Valid)), vec(x));
  Tensor<double> seq({3, 1}, {1, 2, 3}), k({2, 1, 1}, {1, 1});
  EXPECT_EQ(vec(conv1d(seq, k, 1, Padding::Valid)), (std::vector<double>{3, 5}));
}

TEST(Conv1d, OutputLengthArithmetic) {
  EXPECT_EQ(conv1d_output_length(10, 3, 1, Padding::Valid), 8u);
  EXPECT_EQ(conv1d_output_length(10, 3, 2, Padding::Same), 5u);
  EXPECT_EQ(conv1d_output_length(11, 3, 2, Padding::Same), 6u);
  EXPECT_EQ(conv1d(Tensor<float>({11, 2}), Tensor<float>({3, 2, 4}), 2, Padding::Same).dim(0), 6u);
}

TEST(Conv1d, RejectsBadGroupsAndWideKernels) {
  EXPECT_THROW(conv1d(Tensor<float>({5, 3}), Tensor<float>({3, 1, 3}), 1, Padding::Same, 2), Error);
  EXPECT_THROW(conv1d(Tensor<float>({2, 1}), Tensor<float>({3, 1, 1}), 1, Padding::Valid), Error);
}

TEST(Backward, SumAndSquare) {
  Tensor<double> x({3}, {1, -2, 0.5}, true);
  sum(x).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{1, 1, 1}));
  x.zero_grad();
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{2, -4, 1}));
}

TEST(Backward, RejectsNonScalarAndDoubleCall) {
  Tensor<double> x({3}, {1, 2, 3}, true);
  EXPECT_THROW(mul(x, x).backward(), Error);
  auto l = sum(mul(x, x));
  l.backward();
  EXPECT_THROW(l.backward(), Error);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor<double> x({1}, {3.0}, true);
  auto y = mul(x, x);
  sum(add(y, y)).backward();  // d(2x^2)/dx = 4x
  EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(NoGrad, SuppressesGraph) {
  Tensor<double> x({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard g;
    y = mul(x, x);
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto a = random_tensor<float>({6, 8}, rng);
    auto k = random_tensor<float>({3, 6, 4}, rng);
    auto y = conv1d(softmax(matmul(a, transpose(a)), 1), k, 1, Padding::Same);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace modasr
