// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "modasr/ctc.hpp"
#include "modasr/encoder.hpp"
#include "modasr/eval.hpp"
#include "modasr/routing.hpp"
#include "oracles.hpp"

namespace modasr::testing {

struct SweepResult {
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst = 0.0;
};

// ctc_loss against path enumeration for every feasible (T <= 6, |y| <= 3, V <= 4).
// `draws` random logit matrices per (V, T, target).
inline SweepResult ctc_oracle_sweep(std::uint64_t seed, double tolerance = 1e-10, int draws = 3) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t vocab = 2; vocab <= 4; ++vocab) {
    for (const auto& target : all_sequences(static_cast<int>(vocab) - 1, 3, 1)) {
      for (std::size_t frames = 1; frames <= 6; ++frames) {
        if (ctc_min_frames(target) > frames) continue;
        for (int d = 0; d < draws; ++d) {
          auto x = random_tensor<double>({frames, vocab}, rng, -3.0, 3.0, false);
          const double got = ctc_loss(x, std::span<const int>(target)).item();
          const std::vector<double> logits(x.data().begin(), x.data().end());
          const double want = ctc_bruteforce(logits, frames, vocab, target);
          const double err = std::abs(got - want);
          r.worst = std::max(r.worst, err);
          ++r.instances;
          if (!(err <= tolerance)) ++r.failures;
        }
      }
    }
  }
  return r;
}

// wer against recursive edit distance on all pairs up to length 4 over 3 symbols.
inline SweepResult wer_oracle_sweep() {
  SweepResult r;
  const auto seqs = all_sequences(3, 4, 1);
  for (const auto& ref : seqs) {
    if (ref.empty()) continue;
    for (const auto& hyp : seqs) {
      const WerResult w = wer(ref, hyp);
      const std::size_t want = edit_distance_bruteforce(ref, hyp);
      const bool ok = w.errors() == want && w.ref_length == ref.size() &&
                      w.wer == static_cast<double>(want) / static_cast<double>(ref.size());
      ++r.instances;
      if (!ok) ++r.failures;
      r.worst = std::max(r.worst, std::abs(static_cast<double>(w.errors()) - static_cast<double>(want)));
    }
  }
  return r;
}

// Random batches with random decisions: aggregate(dispatch(x)) must restore
// the id sequence and sub-batches must partition the input multiset.
inline SweepResult dispatch_property_sweep(std::size_t batches, std::uint64_t seed) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 16)(rng);
    const std::size_t e = std::array<std::size_t, 3>{2, 3, 5}[std::uniform_int_distribution<int>(0, 2)(rng)];
    std::vector<int> items(n);
    std::vector<RoutingDecision> decisions(n);
    for (std::size_t i = 0; i < n; ++i) {
      items[i] = static_cast<int>(std::uniform_int_distribution<int>(0, 5)(rng) * 100 + i);  // duplicates in /100
      decisions[i].expert_index = std::uniform_int_distribution<std::size_t>(0, e - 1)(rng);
    }
    auto split = dispatch<int>(items, decisions, e);
    bool ok = split.sub_batches.size() == e;
    std::map<int, int> multiset;
    for (int v : items) ++multiset[v];
    for (std::size_t k = 0; k < e && ok; ++k) {
      // Relative order inside each sub-batch.
      std::vector<int> expect;
      for (std::size_t i = 0; i < n; ++i) {
        if (decisions[i].expert_index == k) expect.push_back(items[i]);
      }
      ok = ok && expect == split.sub_batches[k];
      for (int v : split.sub_batches[k]) --multiset[v];
    }
    for (const auto& [v, c] : multiset) ok = ok && c == 0;
    ok = ok && aggregate(split.sub_batches, split.order) == items;
    ++r.instances;
    if (!ok) ++r.failures;
  }
  return r;
}

// Modular-vs-baseline MAC equality for one (experts, modular layer set).
struct ParityCase {
  std::size_t experts;
  std::set<std::size_t> layers;  // 0-based
};

inline std::vector<ParityCase> parity_cases() {
  std::vector<ParityCase> out;
  for (std::size_t e : {2, 3, 5}) {
    for (const auto& l : std::vector<std::set<std::size_t>>{{0}, {0, 1}, {0, 1, 2}, {1}, {2}}) out.push_back({e, l});
  }
  return out;
}

inline Domain random_domain(std::mt19937_64& rng) {
  const int k = std::uniform_int_distribution<int>(0, 8)(rng);
  if (k == 0) return Domain::make(NoiseKind::Clean, Origin::CleanOrig);
  const NoiseKind kinds[] = {NoiseKind::Bus, NoiseKind::Cafe, NoiseKind::Pedestrian, NoiseKind::Street};
  return Domain::make(kinds[(k - 1) % 4], k <= 4 ? Origin::Simu : Origin::Real);
}

inline EncoderConfig small_encoder_config() {
  EncoderConfig c;
  c.feat_dim = 6;
  c.num_layers = 4;
  c.d_model = 8;
  c.heads = 2;
  c.ffn_dim = 12;
  c.kernel_size = 3;
  c.vocab_size = 5;
  c.subsampling = 2;
  return c;
}

inline std::vector<Tensor<float>> random_feature_batch(std::mt19937_64& rng, std::size_t feat_dim, std::size_t max_n = 6) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_n)(rng);
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(random_tensor<float>({std::uniform_int_distribution<std::size_t>(1, 12)(rng), feat_dim}, rng, -1, 1, false));
  }
  return out;
}

// Returns (instances, mismatches) across batches_per_case random batches.
inline SweepResult mac_parity_sweep(std::size_t batches_per_case, std::uint64_t seed) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  const EncoderConfig cfg = small_encoder_config();
  const auto base = EncoderParams<float>::init(cfg, seed);
  for (const auto& pc : parity_cases()) {
    const auto mod = EncoderParams<float>::init(cfg, seed, pc.layers, pc.experts);
    RoutingContext<float> ctx;
    ctx.modular_layers = pc.layers;
    ctx.scheme = scheme_for_experts(pc.experts);
    for (std::size_t b = 0; b < batches_per_case; ++b) {
      const auto feats = random_feature_batch(rng, cfg.feat_dim);
      std::vector<RoutingDecision> decisions;
      for (std::size_t i = 0; i < feats.size(); ++i) decisions.push_back(fixed_route(random_domain(rng), ctx.scheme));
      NoGradGuard g;
      mac::Scope s1;
      encoder_forward_batch<float>(feats, base, nullptr, {});
      const auto base_macs = s1.count();
      mac::Scope s2;
      encoder_forward_batch<float>(feats, mod, &ctx, decisions);
      const auto mod_macs = s2.count();
      ++r.instances;
      if (base_macs != mod_macs || base_macs == 0) ++r.failures;
      r.worst = std::max(r.worst, std::abs(static_cast<double>(base_macs) - static_cast<double>(mod_macs)));
    }
  }
  return r;
}

// Clone-initialized experts under fixed routing vs the baseline built from
// the same seed: max element-wise deviation over `batches` random batches.
inline SweepResult baseline_equivalence_sweep(std::size_t batches, std::uint64_t seed, double tolerance = 1e-6) {
  SweepResult r;
  std::mt19937_64 rng(seed);
  const EncoderConfig cfg = small_encoder_config();
  for (std::size_t b = 0; b < batches; ++b) {
    const ParityCase pc = parity_cases()[b % parity_cases().size()];
    const std::uint64_t s = seed + b;
    const auto base = EncoderParams<float>::init(cfg, s);
    const auto mod = EncoderParams<float>::init(cfg, s, pc.layers, pc.experts, ExpertInit::Clone);
    RoutingContext<float> ctx;
    ctx.modular_layers = pc.layers;
    ctx.scheme = scheme_for_experts(pc.experts);
    const auto feats = random_feature_batch(rng, cfg.feat_dim);
    std::vector<RoutingDecision> decisions;
    for (std::size_t i = 0; i < feats.size(); ++i) decisions.push_back(fixed_route(random_domain(rng), ctx.scheme));
    NoGradGuard g;
    const auto y0 = encoder_forward_batch<float>(feats, base, nullptr, {});
    const auto y1 = encoder_forward_batch<float>(feats, mod, &ctx, decisions);
    double worst = 0.0;
    bool ok = y0.size() == y1.size();
    for (std::size_t i = 0; ok && i < y0.size(); ++i) {
      ok = y0[i].shape() == y1[i].shape();
      for (std::size_t k = 0; ok && k < y0[i].numel(); ++k) {
        worst = std::max(worst, std::abs(static_cast<double>(y0[i].at(k)) - y1[i].at(k)));
      }
    }
    r.worst = std::max(r.worst, worst);
    ++r.instances;
    if (!ok || !(worst <= tolerance)) ++r.failures;
  }
  return r;
}

}  // namespace modasr::testing
