// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "modasr/conformer.hpp"
#include "modasr/ctc.hpp"
#include "modasr/features.hpp"
#include "modasr/ops.hpp"

namespace {

using namespace modasr;

Tensor<float> random_tensor(Shape shape, std::mt19937_64& rng, bool grad = false) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return Tensor<float>(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const auto a = random_tensor({n, n}, rng);
  const auto b = random_tensor({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

void BM_ConformerBlockForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const BlockDims dims{32, 4, 64, 5};
  const auto p = ConformerBlockParams<float>::init(dims, rng);
  const auto x = random_tensor({t, dims.d_model}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conformer_block(x, p));
}
BENCHMARK(BM_ConformerBlockForward)->Arg(25)->Arg(100);

void BM_ConformerBlockBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const BlockDims dims{32, 4, 64, 5};
  const auto p = ConformerBlockParams<float>::init(dims, rng);
  const auto x = random_tensor({t, dims.d_model}, rng, true);
  for (auto _ : state) {
    auto loss = sum(conformer_block(x, p));
    loss.backward();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_ConformerBlockBackward)->Arg(25)->Arg(100);

void BM_CtcLoss(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  const auto logits = random_tensor({t, 33}, rng, true);
  std::vector<int> targets(t / 4);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = 1 + static_cast<int>(i % 32);
  for (auto _ : state) {
    auto loss = ctc_loss(logits, targets);
    loss.backward();
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_CtcLoss)->Arg(50)->Arg(200);

void BM_Logmel(benchmark::State& state) {
  const auto seconds = static_cast<std::size_t>(state.range(0));
  const FeatureConfig cfg;
  std::mt19937_64 rng(5);
  std::normal_distribution<float> g(0.0f, 0.1f);
  std::vector<float> wave(seconds * static_cast<std::size_t>(cfg.sample_rate));
  for (auto& s : wave) s = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(logmel(wave, cfg.sample_rate, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(wave.size()));
}
BENCHMARK(BM_Logmel)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
