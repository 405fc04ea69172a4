// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "modasr/training.hpp"

namespace modasr {
namespace {

TEST(Schedule, WarmupThenInverseSqrt) {
  TrainSchedule s;
  s.warmup_steps = 100;
  s.peak_lr = 0.05;
  EXPECT_DOUBLE_EQ(s.lr_at(1), 0.0005);
  EXPECT_DOUBLE_EQ(s.lr_at(50), 0.025);
  EXPECT_DOUBLE_EQ(s.lr_at(100), 0.05);
  EXPECT_DOUBLE_EQ(s.lr_at(400), 0.025);
  for (std::size_t t = 101; t < 1000; ++t) EXPECT_LT(s.lr_at(t), s.lr_at(t - 1));
}

TEST(Schedule, FrozenEpochsAreOneBased) {
  TrainSchedule s;
  s.router_frozen_epochs = 2;
  EXPECT_TRUE(s.router_frozen(1));
  EXPECT_TRUE(s.router_frozen(2));
  EXPECT_FALSE(s.router_frozen(3));
  s.router_frozen_epochs = 0;
  EXPECT_FALSE(s.router_frozen(1));
}

TEST(Schedule, ValidationAndJson) {
  TrainSchedule s;
  s.batch_size = 0;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.router_frozen_epochs = -1;
  EXPECT_THROW(s.validate(), Error);
  s = {};
  s.peak_lr = 0.01;
  s.seed = 99;
  const auto back = train_schedule_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  try {
    train_schedule_from_json({{"max_epoch", 3}});
    FAIL() << "unknown field accepted";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("max_epoch"), std::string::npos);
  }
}

ParamList<float> one_param(float value, float grad) {
  Tensor<float> t({1}, value, true);
  t.node_ptr()->grad = {grad};
  return {{"p", t}};
}

TEST(Optimizer, MomentumByHand) {
  auto ps = one_param(1.0f, 1.0f);
  SgdMomentum opt(0.9);
  opt.step(ps, 0.1);
  EXPECT_FLOAT_EQ(ps[0].second.at(0), 0.9f);
  opt.step(ps, 0.1);  // v = 0.9 + 1
  EXPECT_FLOAT_EQ(ps[0].second.at(0), 0.71f);
}

TEST(Optimizer, ClipToGlobalNorm) {
  Tensor<float> a({2}, 0.0f, true), b({1}, 0.0f, true);
  a.node_ptr()->grad = {3.0f, 0.0f};
  b.node_ptr()->grad = {4.0f};
  const ParamList<float> ps{{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(grad_norm(ps), 5.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(grad_norm(ps), 5.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-7);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-7);
  zero_grads(ps);
  EXPECT_EQ(grad_norm(ps), 0.0);
}

Checkpoint constructed(int epoch, double val, float base) {
  Checkpoint c;
  c.fingerprint = "fp";
  c.epoch = epoch;
  c.val_loss = val;
  c.entries.push_back({"w", {2, 2}, {base, base + 1, -base, 0.5f}});
  c.entries.push_back({"b", {3}, {base * 2, 0.25f, 1e-3f}});
  return c;
}

TEST(Checkpoint, BinaryRoundTripIsBitExact) {
  auto c = constructed(7, 0.123456789, 1.5f);
  c.contributing_epochs = {3, 5, 7};
  c.entries[0].values[3] = -0.0f;
  const auto bytes = serialize_checkpoint(c);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_TRUE(back == c);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_TRUE(std::signbit(back.entries[0].values[3]));
  EXPECT_TRUE(std::equal(bytes.begin(), bytes.begin() + 8, kCheckpointMagic));
}

TEST(Checkpoint, NanValLossSurvives) {
  auto c = constructed(1, std::numeric_limits<double>::quiet_NaN(), 0.0f);
  const auto back = deserialize_checkpoint(serialize_checkpoint(c));
  EXPECT_TRUE(std::isnan(back.val_loss));
  EXPECT_TRUE(back == c);
}

TEST(Checkpoint, EveryTruncationAndTrailingByteIsRejected) {
  const auto bytes = serialize_checkpoint(constructed(2, 1.0, 3.0f));
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_THROW(deserialize_checkpoint(std::span(bytes).first(n)), CheckpointError) << "length " << n;
  }
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(longer), CheckpointError);
}

TEST(Checkpoint, VersionMismatchNamesBothVersions) {
  auto bytes = serialize_checkpoint(constructed(2, 1.0, 3.0f));
  bytes[8] = 2;
  try {
    deserialize_checkpoint(bytes);
    FAIL() << "version 2 accepted";
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
    EXPECT_NE(msg.find('1'), std::string::npos) << msg;
  }
  bytes[8] = 1;
  bytes[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "modasr_ckpt_test.bin";
  const auto c = constructed(4, 0.5, -2.0f);
  save_checkpoint(c, path);
  EXPECT_TRUE(load_checkpoint(path) == c);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, ValidateCatchesBadEntries) {
  auto c = constructed(1, 1.0, 1.0f);
  c.entries[1].values.pop_back();
  EXPECT_THROW(c.validate(), CheckpointError);
  c = constructed(1, 1.0, 1.0f);
  c.entries[1].name = "w";
  EXPECT_THROW(c.validate(), CheckpointError);
  c = constructed(1, 1.0, 1.0f);
  c.entries[0].values[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(c.validate(), CheckpointError);
}

TEST(Checkpoint, SnapshotRestore) {
  Tensor<float> a({2}, std::vector<float>{1, 2}, true);
  const ParamList<float> ps{{"a", a}};
  const auto snap = snapshot(ps, "fp", 3, 0.7);
  a.mutable_data()[0] = 9;
  restore(snap, ps);
  EXPECT_EQ(a.at(0), 1.0f);
  Tensor<float> wrong({3}, 0.0f, true);
  EXPECT_THROW(restore(snap, ParamList<float>{{"a", wrong}}), Error);
  EXPECT_THROW(restore(snap, ParamList<float>{{"z", a}}), Error);
}

TEST(Averaging, IdempotentOnIdenticalCheckpoints) {
  std::vector<Checkpoint> same;
  for (int e = 1; e <= 5; ++e) {
    auto c = constructed(e, 1.0 + e, 0.3f);
    same.push_back(c);
  }
  const auto avg = average_checkpoints(same, 5);
  for (std::size_t p = 0; p < avg.entries.size(); ++p) EXPECT_EQ(avg.entries[p].values, same[0].entries[p].values);
}

TEST(Averaging, MeanOfTwoAndFourIsThree) {
  Checkpoint a = constructed(1, 0.1, 0.0f), b = constructed(2, 0.2, 0.0f);
  std::fill(a.entries[0].values.begin(), a.entries[0].values.end(), 2.0f);
  std::fill(b.entries[0].values.begin(), b.entries[0].values.end(), 4.0f);
  const std::vector<Checkpoint> c{a, b};
  const auto avg = average_checkpoints(c, 2);
  for (float v : avg.entries[0].values) EXPECT_EQ(v, 3.0f);
  EXPECT_EQ(avg.contributing_epochs, (std::vector<int>{1, 2}));
  EXPECT_EQ(avg.epoch, 2);
  EXPECT_TRUE(std::isnan(avg.val_loss));
  EXPECT_EQ(avg.fingerprint, "fp");
}

TEST(Averaging, SelectsLowestValidationLoss) {
  const double vals[] = {3, 1, 2, 5, 4};
  std::vector<Checkpoint> c;
  for (int e = 0; e < 5; ++e) c.push_back(constructed(e + 1, vals[e], static_cast<float>(e)));
  EXPECT_EQ(select_best(c, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(average_checkpoints(c, 2).contributing_epochs, (std::vector<int>{2, 3}));
  EXPECT_FLOAT_EQ(average_checkpoints(c, 2).entries[0].values[0], 1.5f);
  EXPECT_EQ(select_best(c, 5), (std::vector<std::size_t>{1, 2, 0, 4, 3}));
  EXPECT_THROW(select_best(c, 6), Error);
  EXPECT_THROW(select_best(c, 0), Error);
}

TEST(Averaging, TiesGoToTheEarlierEpoch) {
  std::vector<Checkpoint> c{constructed(3, 1.0, 0.0f), constructed(1, 1.0, 1.0f), constructed(2, 2.0, 2.0f)};
  EXPECT_EQ(select_best(c, 1), (std::vector<std::size_t>{1}));
}

TEST(Averaging, PermutationInvariantBitExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<Checkpoint> c;
  for (int e = 1; e <= 8; ++e) {
    auto ck = constructed(e, std::uniform_real_distribution<double>(0, 1)(rng), 0.0f);
    for (auto& en : ck.entries) {
      for (auto& v : en.values) v = u(rng);
    }
    c.push_back(ck);
  }
  const auto ref = average_checkpoints(c, 5);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(c.begin(), c.end(), rng);
    EXPECT_TRUE(average_checkpoints(c, 5) == ref);
  }
}

TEST(Averaging, RejectsMismatchedLayoutAndMissingLoss) {
  std::vector<Checkpoint> c{constructed(1, 1.0, 0.0f), constructed(2, 2.0, 0.0f)};
  c[1].entries[1].shape = {1, 3};
  EXPECT_THROW(average_checkpoints(c, 2), Error);
  c[1] = constructed(2, std::numeric_limits<double>::quiet_NaN(), 0.0f);
  EXPECT_THROW(average_checkpoints(c, 1), Error);
}

// A few dozen short synthetic utterances and a tiny model.
class TinyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    auto spec = CorpusSpec::chime4_scaled(0.0006, 0.006);
    spec.max_tokens = 3;
    data_ = new Dataset(load_dataset(build_corpus(spec, 2), FeatureConfig{}));
  }
  static void TearDownTestSuite() { delete data_; }

  static EncoderConfig config() {
    EncoderConfig c;
    c.num_layers = 2;
    c.d_model = 8;
    c.heads = 2;
    c.ffn_dim = 16;
    c.kernel_size = 3;
    return c;
  }
  static RouterConfig router_config() {
    RouterConfig r;
    r.channels = 4;
    r.kernel_size = 3;
    return r;
  }
  static TrainSchedule schedule(int epochs) {
    TrainSchedule s;
    s.max_epochs = epochs;
    s.warmup_steps = 5;
    s.batch_size = 4;
    return s;
  }
  AsrModel learned_model() const {
    std::mt19937_64 rng(4);
    return AsrModel::modular(config(), 3, RoutingMode::Learned, {1}, 2, ExpertInit::Independent,
                             RouterClassifierParams<float>::init(router_config(), rng));
  }
  std::vector<const Example*> train() const { return data_->subset(Subset::Train); }
  std::vector<const Example*> dev() const { return data_->subset(Subset::Dev); }

  static Dataset* data_;
};

Dataset* TinyTraining::data_ = nullptr;

TEST_F(TinyTraining, BaselineCurveIsFiniteAndCheckpointsPerEpoch) {
  AsrModel m = AsrModel::baseline(config(), 1);
  std::vector<int> seen;
  const auto r = train_asr(m, train(), dev(), schedule(3), [&](const EpochRecord& e) { seen.push_back(e.epoch); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
  ASSERT_EQ(r.checkpoints.size(), 3u);
  for (const auto& e : r.curve) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    EXPECT_TRUE(std::isfinite(e.val_loss));
    EXPECT_TRUE(std::isnan(e.util_entropy));
    EXPECT_EQ(r.checkpoints[e.epoch - 1].val_loss, e.val_loss);
    EXPECT_EQ(r.checkpoints[e.epoch - 1].fingerprint, m.fingerprint());
  }
  EXPECT_LT(r.curve.back().train_loss, r.curve.front().train_loss);
  restore(r.checkpoints.back(), m.parameters());
  EXPECT_DOUBLE_EQ(validation_loss(m, dev()), r.curve.back().val_loss);
}

TEST_F(TinyTraining, RunsAreDeterministic) {
  AsrModel a = AsrModel::modular(config(), 5, RoutingMode::Fixed, {0}, 2);
  AsrModel b = AsrModel::modular(config(), 5, RoutingMode::Fixed, {0}, 2);
  const auto ra = train_asr(a, train(), dev(), schedule(2));
  const auto rb = train_asr(b, train(), dev(), schedule(2));
  ASSERT_EQ(ra.checkpoints.size(), rb.checkpoints.size());
  for (std::size_t i = 0; i < ra.checkpoints.size(); ++i) EXPECT_TRUE(ra.checkpoints[i] == rb.checkpoints[i]);
}

TEST_F(TinyTraining, FixedRoutingLogsUtilization) {
  AsrModel m = AsrModel::modular(config(), 5, RoutingMode::Fixed, {0}, 2);
  const auto r = train_asr(m, train(), dev(), schedule(1));
  const auto& e = r.curve.front();
  std::size_t clean = 0;
  for (const auto* x : train()) clean += x->domain.clean();
  EXPECT_EQ(e.routing_counts, (std::vector<std::size_t>{clean, train().size() - clean}));
  EXPECT_NEAR(e.util_entropy, utilization_from_counts(e.routing_counts).entropy, 1e-12);
}

TEST_F(TinyTraining, RouterFrozenForWholeRunStaysBitEqual) {
  AsrModel m = learned_model();
  const auto before = snapshot(m.router_parameters(), "", 0, 0);
  auto s = schedule(3);
  s.router_frozen_epochs = 3;
  const auto r = train_asr(m, train(), dev(), s);
  EXPECT_TRUE(snapshot(m.router_parameters(), "", 0, 0) == before);
  for (const auto& e : r.curve) {
    EXPECT_TRUE(e.router_frozen);
    EXPECT_EQ(e.router_delta, 0.0);
    EXPECT_EQ(e.router_grad_norm, 0.0);
  }
}

TEST_F(TinyTraining, RouterUpdatesOnlyAfterFrozenEpochs) {
  AsrModel m = learned_model();
  auto s = schedule(6);
  s.router_frozen_epochs = 5;
  const auto r = train_asr(m, train(), dev(), s);
  ASSERT_EQ(r.curve.size(), 6u);
  for (int e = 0; e < 5; ++e) {
    EXPECT_TRUE(r.curve[e].router_frozen);
    EXPECT_EQ(r.curve[e].router_delta, 0.0) << "epoch " << e + 1;
    EXPECT_EQ(r.curve[e].router_grad_norm, 0.0) << "epoch " << e + 1;
  }
  EXPECT_FALSE(r.curve[5].router_frozen);
  EXPECT_GT(r.curve[5].router_delta, 0.0);
  EXPECT_GT(r.curve[5].router_grad_norm, 0.0);
  for (const auto& e : r.curve) {
    EXPECT_TRUE(std::isfinite(e.util_entropy));
    EXPECT_EQ(std::accumulate(e.routing_counts.begin(), e.routing_counts.end(), std::size_t{0}), train().size());
  }
}

TEST_F(TinyTraining, FixedRoutingNeedsEveryExpertClassInTraining) {
  std::vector<const Example*> noisy;
  for (const auto* x : train()) {
    if (!x->domain.clean()) noisy.push_back(x);
  }
  AsrModel m = AsrModel::modular(config(), 5, RoutingMode::Fixed, {0}, 2);
  EXPECT_THROW(train_asr(m, noisy, dev(), schedule(1)), Error);
}

TEST_F(TinyTraining, RouterPretrainingIsDeterministicAndNeedsAllClasses) {
  auto rc = router_config();
  const auto s = schedule(2);
  const auto a = pretrain_router(train(), dev(), ExpertScheme::Two, s, rc);
  const auto b = pretrain_router(train(), dev(), ExpertScheme::Two, s, rc);
  ParamList<float> pa, pb;
  a.params.collect("r", pa);
  b.params.collect("r", pb);
  EXPECT_TRUE(snapshot(pa, "", 0, 0) == snapshot(pb, "", 0, 0));
  EXPECT_EQ(a.curve.size(), 2u);
  EXPECT_EQ(a.confusion.total(), dev().size());
  EXPECT_DOUBLE_EQ(a.accuracy, a.confusion.accuracy());

  // Dev has no clean utterances, so it cannot train a two-class router.
  EXPECT_THROW(pretrain_router(dev(), dev(), ExpertScheme::Two, s, rc), Error);
}

TEST(Curve, CsvAndJson) {
  std::vector<EpochRecord> c(2);
  c[0].epoch = 1;
  c[0].train_loss = 2.5;
  c[0].val_loss = 2.0;
  c[1].epoch = 2;
  c[1].train_loss = 1.25;
  c[1].val_loss = 1.5;
  c[1].util_entropy = 0.5;
  c[1].routing_counts = {3, 1};
  const std::string csv = loss_curve_csv(c);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,util_entropy");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  const auto back = curve_from_json(curve_to_json(c));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(std::isnan(back[0].util_entropy));
  EXPECT_EQ(back[1].util_entropy, 0.5);
  EXPECT_EQ(back[1].routing_counts, c[1].routing_counts);
  EXPECT_EQ(loss_curve_csv(back), csv);
}

}  // namespace
}  // namespace modasr
