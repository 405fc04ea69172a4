// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion. Thresholds are pinned
// below and the process exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "modasr/training.hpp"
#include "op_cases.hpp"
#include "sweeps.hpp"

namespace modasr::testing {
namespace {

// Pinned thresholds.
constexpr double kGradRelTol = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kCtcTol = 1e-10;
constexpr double kEquivTol = 1e-6;
constexpr std::size_t kEquivBatches = 50;
constexpr std::size_t kParityBatchesPerCase = 20;
constexpr std::size_t kDispatchBatches = 1000;
constexpr double kRouterAccuracy = 0.95;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string sweep_detail(const SweepResult& r, const std::string& what) {
  return std::to_string(r.instances) + " " + what + ", " + std::to_string(r.failures) + " failures, worst " + fmt(r.worst, 3);
}

Outcome gradient_oracle() {
  double worst = 0.0;
  std::size_t instances = 0, failures = 0, ops = 0;
  auto run = [&](const std::vector<OpCase>& cases, std::uint64_t seed) {
    for (std::size_t c = 0; c < cases.size(); ++c) {
      std::mt19937_64 rng(seed + c);
      ++ops;
      for (int i = 0; i < kGradInstances; ++i) {
        const auto r = cases[c].run(rng);
        ++instances;
        worst = std::max(worst, r.max_rel_error);
        if (r.checked == 0 || !(r.max_rel_error < kGradRelTol)) ++failures;
      }
    }
  };
  run(primitive_cases(), 0xC0FFEE);
  run(block_cases(), 0xB10C);
  return {failures == 0, std::to_string(ops) + " ops x " + std::to_string(kGradInstances) + " instances, worst rel " +
                             fmt(worst, 3) + " (< " + fmt(kGradRelTol) + ")"};
}

Outcome ctc_oracle() {
  const auto r = ctc_oracle_sweep(7, kCtcTol);
  return {r.failures == 0 && r.instances > 0, sweep_detail(r, "instances")};
}

Outcome baseline_equivalence() {
  const auto r = baseline_equivalence_sweep(kEquivBatches, 23, kEquivTol);
  return {r.failures == 0 && r.instances == kEquivBatches, sweep_detail(r, "batches")};
}

Outcome compute_parity() {
  const auto r = mac_parity_sweep(kParityBatchesPerCase, 29);
  const std::size_t expected = parity_cases().size() * kParityBatchesPerCase;
  return {r.failures == 0 && r.instances == expected,
          sweep_detail(r, "batches over E in {2,3,5} x layers {1},{1,2},{1,2,3},{2},{3}")};
}

Outcome dispatch_aggregate() {
  const auto r = dispatch_property_sweep(kDispatchBatches, 31);
  return {r.failures == 0 && r.instances == kDispatchBatches, sweep_detail(r, "batches")};
}

// Desk-scale corpus shared by the router and modularity experiments.
Dataset desk_corpus(double train_fraction, int vocab, double token_ms) {
  auto spec = CorpusSpec::chime4_scaled(train_fraction, 0.1);
  spec.tokens.vocab_size = vocab;
  spec.tokens.token_ms = token_ms;
  return load_dataset(build_corpus(spec, 7), FeatureConfig{});
}

Outcome router_classifier() {
  const Dataset d = desk_corpus(0.01, 10, 80);
  const auto train = d.subset(Subset::Train);
  const auto dev = d.subset(Subset::Dev);
  TrainSchedule s;
  s.max_epochs = 15;
  s.batch_size = 8;
  s.seed = 1;

  RouterConfig two;
  two.classes = 2;
  const auto r2 = pretrain_router(train, dev, ExpertScheme::Two, s, two);

  RouterConfig five;
  five.classes = 5;
  const auto r5 = pretrain_router(train, dev, ExpertScheme::Five, s, five);
  // Class 0 is clean, 1..4 are the noise kinds.
  std::size_t noise_noise = 0, clean_noise = 0;
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      if (i == j) continue;
      const std::size_t c = r5.confusion.counts[i][j];
      if (i > 0 && j > 0) noise_noise += c;
      else clean_noise += c;
    }
  }
  const bool pass = r2.accuracy >= kRouterAccuracy && noise_noise > clean_noise;
  return {pass, "2-class dev accuracy " + fmt(r2.accuracy) + " (>= " + fmt(kRouterAccuracy) + "); 5-class off-diagonal noise-noise " +
                    std::to_string(noise_noise) + " vs clean-noise " + std::to_string(clean_noise)};
}

// Paired baseline vs 2-expert fixed routing at layer 1, same seeds.
struct SeedResult {
  std::uint64_t seed = 0;
  double base_dev = 0.0, mod_dev = 0.0;
  double base_noisy = 0.0, mod_noisy = 0.0;
  int base_best_epoch = 0;
  std::optional<int> mod_first_reach;
};

constexpr int kDeskVocab = 32;
constexpr double kDeskTokenMs = 60.0;
constexpr double kDeskTrainFraction = 0.03;
constexpr std::size_t kDeskAverage = 5;
const std::vector<std::uint64_t> kDeskSeeds{1, 2, 3};

EncoderConfig desk_encoder() {
  EncoderConfig c;
  c.vocab_size = kDeskVocab;
  c.num_layers = 4;
  c.d_model = 16;
  c.ffn_dim = 32;
  c.heads = 2;
  return c;
}

TrainSchedule desk_schedule(std::uint64_t seed) {
  TrainSchedule s;
  s.max_epochs = 12;
  s.peak_lr = 0.05;
  s.batch_size = 8;
  s.warmup_steps = 100;
  s.seed = seed;
  return s;
}

const std::vector<SeedResult>& modularity_study() {
  static const std::vector<SeedResult> results = [] {
    const Dataset d = desk_corpus(kDeskTrainFraction, kDeskVocab, kDeskTokenMs);
    const auto train = d.subset(Subset::Train);
    const auto dev = d.subset(Subset::Dev);
    const auto ev = d.subset(Subset::Eval);
    std::vector<SeedResult> out;
    for (const std::uint64_t seed : kDeskSeeds) {
      SeedResult r;
      r.seed = seed;
      double base_best = std::numeric_limits<double>::infinity();
      for (int m = 0; m < 2; ++m) {
        AsrModel model = m == 0 ? AsrModel::baseline(desk_encoder(), seed)
                                : AsrModel::modular(desk_encoder(), seed, RoutingMode::Fixed, {0}, 2);
        const auto res = train_asr(model, train, dev, desk_schedule(seed));
        restore(average_checkpoints(res.checkpoints, kDeskAverage), model.parameters());
        const double dev_wer = evaluate(model, dev).pooled_wer({"real-dev", "simu-dev"});
        const double noisy_wer = evaluate(model, ev).pooled_wer({"real-eval", "simu-eval"});
        if (m == 0) {
          r.base_dev = dev_wer;
          r.base_noisy = noisy_wer;
          for (const auto& e : res.curve) {
            if (e.val_loss < base_best) {
              base_best = e.val_loss;
              r.base_best_epoch = e.epoch;
            }
          }
        } else {
          r.mod_dev = dev_wer;
          r.mod_noisy = noisy_wer;
          for (const auto& e : res.curve) {
            if (e.val_loss <= base_best) {
              r.mod_first_reach = e.epoch;
              break;
            }
          }
        }
      }
      out.push_back(r);
    }
    return out;
  }();
  return results;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome modularity_benefit() {
  const auto& rs = modularity_study();
  std::vector<double> base, mod;
  std::size_t noisy_wins = 0;
  std::string per_seed;
  for (const auto& r : rs) {
    base.push_back(r.base_dev);
    mod.push_back(r.mod_dev);
    if (r.mod_noisy < r.base_noisy) ++noisy_wins;
    per_seed += "; seed " + std::to_string(r.seed) + " dev " + fmt(100 * r.base_dev) + "->" + fmt(100 * r.mod_dev) +
                " noisy " + fmt(100 * r.base_noisy) + "->" + fmt(100 * r.mod_noisy);
  }
  const double mb = median(base), mm = median(mod);
  return {mm <= mb && noisy_wins >= 2, "median dev WER% baseline " + fmt(100 * mb) + " modular " + fmt(100 * mm) +
                                           ", noisy strictly lower in " + std::to_string(noisy_wins) + "/3" + per_seed};
}

Outcome freeze_schedule() {
  const Dataset d = desk_corpus(0.003, 10, 80);
  const auto train = d.subset(Subset::Train);
  const auto dev = d.subset(Subset::Dev);
  EncoderConfig enc;
  enc.num_layers = 2;
  enc.d_model = 8;
  enc.heads = 2;
  enc.ffn_dim = 16;
  enc.kernel_size = 3;
  RouterConfig rc;
  rc.channels = 8;
  rc.kernel_size = 3;
  TrainSchedule rs;
  rs.max_epochs = 3;
  rs.batch_size = 8;
  rs.seed = 5;
  auto router = pretrain_router(train, dev, ExpertScheme::Two, rs, rc).params;

  TrainSchedule s;
  s.max_epochs = 4;
  s.batch_size = 8;
  s.router_frozen_epochs = 2;
  s.seed = 6;
  AsrModel learned = AsrModel::modular(enc, 6, RoutingMode::Learned, {0}, 2, ExpertInit::Independent, router);
  const auto res = train_asr(learned, train, dev, s);
  bool frozen_zero = true, thawed_moves = false, entropy_logged = true, flag_consistent = true;
  for (const auto& e : res.curve) {
    if (e.epoch <= s.router_frozen_epochs) frozen_zero = frozen_zero && e.router_frozen && e.router_delta == 0.0;
    else thawed_moves = thawed_moves || (!e.router_frozen && e.router_delta > 0.0);
    entropy_logged = entropy_logged && std::isfinite(e.util_entropy);
    flag_consistent = flag_consistent && e.collapsed == (e.max_fraction > kCollapseThreshold);
  }

  // A router biased to expert 1 and never unfrozen routes everything there.
  auto biased = router.clone();
  for (auto& v : biased.head.weight.mutable_data()) v = 0.0f;
  biased.head.bias.mutable_data()[0] = 0.0f;
  biased.head.bias.mutable_data()[1] = 50.0f;
  TrainSchedule cs = s;
  cs.max_epochs = 1;
  cs.router_frozen_epochs = 1;
  AsrModel collapsing = AsrModel::modular(enc, 6, RoutingMode::Learned, {0}, 2, ExpertInit::Independent, biased);
  const auto col = train_asr(collapsing, train, dev, cs);
  const bool fires = col.curve.at(0).collapsed && col.curve.at(0).max_fraction == 1.0;
  const bool boundary = !utilization_from_counts({99, 1}).collapsed && utilization_from_counts({995, 5}).collapsed;

  const bool pass = frozen_zero && thawed_moves && entropy_logged && flag_consistent && fires && boundary;
  std::string detail = "router deltas";
  for (const auto& e : res.curve) detail += " e" + std::to_string(e.epoch) + "=" + fmt(e.router_delta, 3);
  detail += " (frozen 1.." + std::to_string(s.router_frozen_epochs) + "); entropy logged " + (entropy_logged ? "yes" : "no") +
            "; collapse flag on one-expert run " + (fires ? "fires" : "silent") + ", 0.99 boundary " +
            (boundary ? "exclusive" : "wrong");
  return {pass, detail};
}

Checkpoint random_checkpoint(std::mt19937_64& rng, int epoch, double val_loss) {
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  Checkpoint c;
  c.fingerprint = "acceptance";
  c.epoch = epoch;
  c.val_loss = val_loss;
  for (const auto& [name, shape] : std::vector<std::pair<std::string, Shape>>{{"a", {3, 4}}, {"b", {5}}, {"c", {2, 2, 2}}}) {
    CheckpointEntry e{name, shape, {}};
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    for (std::size_t i = 0; i < n; ++i) e.values.push_back(u(rng));
    c.entries.push_back(std::move(e));
  }
  return c;
}

bool same_values(const Checkpoint& a, const Checkpoint& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].values != b.entries[i].values) return false;
  }
  return true;
}

Outcome checkpoint_averaging() {
  std::mt19937_64 rng(41);
  std::size_t checks = 0, failures = 0;
  auto expect = [&](bool ok) {
    ++checks;
    if (!ok) ++failures;
  };
  // Idempotence: averaging k copies returns the values unchanged.
  for (int t = 0; t < 20; ++t) {
    const auto c = random_checkpoint(rng, 1, 0.5);
    const std::vector<Checkpoint> copies(4, c);
    expect(same_values(average_checkpoints(copies, 4), c));
  }
  // Permutation invariance, bit-exact.
  for (int t = 0; t < 20; ++t) {
    std::vector<Checkpoint> cs;
    for (int e = 1; e <= 8; ++e) cs.push_back(random_checkpoint(rng, e, std::uniform_real_distribution<double>(0, 1)(rng)));
    const auto ref = average_checkpoints(cs, 5);
    auto shuffled = cs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    expect(average_checkpoints(shuffled, 5) == ref);
  }
  // Best-k on constructed sequences against a sort-based oracle.
  const std::vector<std::vector<double>> seqs{{3, 1, 2, 5, 4}, {1, 1, 1, 1}, {5, 4, 3, 2, 1}, {2, 2, 1, 3, 1, 0.5}};
  for (const auto& vals : seqs) {
    std::vector<Checkpoint> cs;
    for (std::size_t i = 0; i < vals.size(); ++i) cs.push_back(random_checkpoint(rng, static_cast<int>(i + 1), vals[i]));
    for (std::size_t k = 1; k <= vals.size(); ++k) {
      std::vector<std::size_t> idx(vals.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
      std::vector<int> want;
      for (std::size_t i = 0; i < k; ++i) want.push_back(static_cast<int>(idx[i] + 1));
      std::sort(want.begin(), want.end());
      auto got = average_checkpoints(cs, k).contributing_epochs;
      std::sort(got.begin(), got.end());
      expect(got == want);
    }
  }
  // File round trip, bit-exact.
  for (int t = 0; t < 10; ++t) {
    const auto c = random_checkpoint(rng, t + 1, t == 0 ? std::numeric_limits<double>::quiet_NaN() : 0.25 * t);
    const auto bytes = serialize_checkpoint(c);
    const auto back = deserialize_checkpoint(bytes);
    expect(back == c && serialize_checkpoint(back) == bytes);
  }
  return {failures == 0, std::to_string(checks) + " checks (idempotence, permutation, best-k, round trip), " +
                             std::to_string(failures) + " failures"};
}

Outcome wer_oracle() {
  const auto r = wer_oracle_sweep();
  return {r.failures == 0 && r.instances > 0, sweep_detail(r, "pairs")};
}

Outcome faster_convergence() {
  const auto& rs = modularity_study();
  const int never = desk_schedule(1).max_epochs + 1;
  std::vector<double> first, best;
  std::string per_seed;
  for (const auto& r : rs) {
    first.push_back(r.mod_first_reach.value_or(never));
    best.push_back(r.base_best_epoch);
    per_seed += "; seed " + std::to_string(r.seed) + " first reach " +
                (r.mod_first_reach ? std::to_string(*r.mod_first_reach) : std::string("never")) + " vs baseline best " +
                std::to_string(r.base_best_epoch);
  }
  const double mf = median(first), mb = median(best);
  return {mf <= mb, "median first-reach epoch " + fmt(mf) + " vs baseline best epoch " + fmt(mb) + " (trend check)" + per_seed};
}

struct Criterion {
  int id;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace
}  // namespace modasr::testing

int main() {
  using namespace modasr::testing;
  const std::vector<Criterion> criteria{
      {1, "gradient oracle", gradient_oracle},
      {2, "ctc oracle", ctc_oracle},
      {3, "baseline equivalence", baseline_equivalence},
      {4, "compute parity", compute_parity},
      {5, "dispatch/aggregate", dispatch_aggregate},
      {6, "router classifier", router_classifier},
      {7, "modularity benefit", modularity_benefit},
      {8, "freeze schedule", freeze_schedule},
      {9, "checkpoint averaging", checkpoint_averaging},
      {10, "wer oracle", wer_oracle},
      {11, "convergence direction", faster_convergence},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
