// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "modasr/ctc.hpp"
#include "modasr/ops.hpp"
#include "oracles.hpp"
#include "sweeps.hpp"

namespace modasr {
namespace {

using testing::ctc_bruteforce;

Tensor<double> logits_of(std::size_t t, std::size_t v, std::vector<double> values) {
  return Tensor<double>({t, v}, std::move(values), true);
}

TEST(CtcLoss, SingleFrameIsNegLogSoftmaxOfToken) {
  auto x = logits_of(1, 3, {0.3, -1.2, 2.0});
  const std::vector<int> y{2};
  const auto ls = log_softmax(x.detach(), -1);
  EXPECT_NEAR(ctc_loss(x, std::span<const int>(y)).item(), -ls.at(2), 1e-12);
}

TEST(CtcLoss, TwoFramesMatchesThreePathSum) {
  auto x = logits_of(2, 3, {0.1, 0.7, -0.4, 1.1, -0.3, 0.2});
  const std::vector<int> y{1};
  const auto p = softmax(x.detach(), -1);
  const double blank1 = p.at(0), a1 = p.at(1), blank2 = p.at(3), a2 = p.at(4);
  const double want = -std::log(a1 * a2 + blank1 * a2 + a1 * blank2);
  EXPECT_NEAR(ctc_loss(x, std::span<const int>(y)).item(), want, 1e-10);
}

TEST(CtcLoss, UniformLogitsTwoSymbols) {
  auto x = logits_of(2, 2, {0, 0, 0, 0});
  const std::vector<int> y{1};
  EXPECT_NEAR(ctc_loss(x, std::span<const int>(y)).item(), -std::log(0.75), 1e-12);
}

TEST(CtcLoss, MatchesPathEnumerationOnAllSmallInstances) {
  const auto r = testing::ctc_oracle_sweep(17);
  EXPECT_EQ(r.instances, 3u * 234u);
  EXPECT_EQ(r.failures, 0u) << "worst " << r.worst;
}

TEST(CtcLoss, ProbabilityInUnitInterval) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::size_t v = 2 + i % 5, t = 3 + i % 7;
    auto x = testing::random_tensor<double>({t, v}, rng, -8, 8, false);
    std::vector<int> y{1};
    if (t >= 4) y.push_back(static_cast<int>(v - 1));
    const double loss = ctc_loss(x, std::span<const int>(y)).item();
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(std::exp(-loss), 1.0);
    EXPECT_GT(std::exp(-loss), 0.0);
  }
}

TEST(CtcLoss, RepeatedTokensNeedSeparatingBlank) {
  const std::vector<int> y{1, 1};
  EXPECT_EQ(ctc_min_frames(y), 3u);
  auto ok = logits_of(3, 2, std::vector<double>(6, 0.0));
  const double want = ctc_bruteforce(std::vector<double>(6, 0.0), 3, 2, y);
  EXPECT_NEAR(ctc_loss(ok, std::span<const int>(y)).item(), want, 1e-12);
  auto too_short = logits_of(2, 2, std::vector<double>(4, 0.0));
  EXPECT_THROW(ctc_loss(too_short, std::span<const int>(y)), Error);
}

TEST(CtcLoss, RejectsOutOfRangeTargets) {
  auto x = logits_of(3, 3, std::vector<double>(9, 0.0));
  const std::vector<int> blank{0}, big{3};
  EXPECT_THROW(ctc_loss(x, std::span<const int>(blank)), Error);
  EXPECT_THROW(ctc_loss(x, std::span<const int>(big)), Error);
}

Tensor<float> frames_with_argmax(const std::vector<int>& argmax, std::size_t vocab) {
  std::vector<float> v(argmax.size() * vocab, 0.0f);
  for (std::size_t t = 0; t < argmax.size(); ++t) v[t * vocab + static_cast<std::size_t>(argmax[t])] = 1.0f;
  return Tensor<float>({argmax.size(), vocab}, v);
}

TEST(CtcGreedy, CollapsesRepeatsAndDropsBlanks) {
  EXPECT_EQ(ctc_greedy_decode(frames_with_argmax({0, 1, 1, 0, 2}, 3)), (std::vector<int>{1, 2}));
  EXPECT_TRUE(ctc_greedy_decode(frames_with_argmax({0, 0, 0}, 3)).empty());
  EXPECT_EQ(ctc_greedy_decode(frames_with_argmax({1, 0, 1}, 3)), (std::vector<int>{1, 1}));
}

}  // namespace
}  // namespace modasr
