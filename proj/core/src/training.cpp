// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "modasr/ctc.hpp"
#include "modasr/seed.hpp"

namespace modasr {

void TrainSchedule::validate() const {
  if (max_epochs < 1) throw Error("max_epochs must be >= 1");
  if (warmup_steps < 0) throw Error("warmup_steps must be >= 0");
  if (!(peak_lr > 0.0)) throw Error("peak_lr must be positive");
  if (batch_size == 0) throw Error("batch_size must be >= 1");
  if (router_frozen_epochs < 0 || router_frozen_epochs > max_epochs) {
    throw Error("router_frozen_epochs (" + std::to_string(router_frozen_epochs) + ") must be in [0, max_epochs = " +
                std::to_string(max_epochs) + "]");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0, 1)");
  if (!(clip_norm > 0.0)) throw Error("clip_norm must be positive");
}

double TrainSchedule::lr_at(std::size_t step) const {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  if (warmup_steps == 0) return peak_lr;
  const double w = static_cast<double>(warmup_steps);
  return s <= w ? peak_lr * s / w : peak_lr * std::sqrt(w / s);
}

nlohmann::json to_json(const TrainSchedule& s) {
  return {{"max_epochs", s.max_epochs},
          {"warmup_steps", s.warmup_steps},
          {"peak_lr", s.peak_lr},
          {"batch_size", s.batch_size},
          {"router_frozen_epochs", s.router_frozen_epochs},
          {"seed", s.seed},
          {"momentum", s.momentum},
          {"clip_norm", s.clip_norm}};
}

TrainSchedule train_schedule_from_json(const nlohmann::json& j, TrainSchedule s) {
  static const std::set<std::string> known = {"max_epochs", "warmup_steps",         "peak_lr", "batch_size",
                                              "router_frozen_epochs", "seed", "momentum", "clip_norm"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("schedule: unknown field '" + key + "'");
  }
  s.max_epochs = j.value("max_epochs", s.max_epochs);
  s.warmup_steps = j.value("warmup_steps", s.warmup_steps);
  s.peak_lr = j.value("peak_lr", s.peak_lr);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.router_frozen_epochs = j.value("router_frozen_epochs", s.router_frozen_epochs);
  s.seed = j.value("seed", s.seed);
  s.momentum = j.value("momentum", s.momentum);
  s.clip_norm = j.value("clip_norm", s.clip_norm);
  return s;
}

void SgdMomentum::step(const ParamList<float>& params, double lr) {
  for (const auto& [name, t] : params) {
    auto& node = *t.node_ptr();
    if (node.grad.empty()) continue;
    auto& v = velocity_[name];
    if (v.empty()) v.assign(node.data.size(), 0.0f);
    const auto mu = static_cast<float>(momentum_);
    const auto rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = mu * v[i] + node.grad[i];
      node.data[i] -= rate * v[i];
    }
  }
}

double grad_norm(const ParamList<float>& params) {
  double s = 0.0;
  for (const auto& [name, t] : params) {
    for (float g : t.node_ptr()->grad) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(const ParamList<float>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const auto f = static_cast<float>(max_norm / norm);
    for (const auto& [name, t] : params) {
      for (float& g : t.node_ptr()->grad) g *= f;
    }
  }
  return norm;
}

void zero_grads(const ParamList<float>& params) {
  for (const auto& [name, t] : params) t.node_ptr()->grad.clear();
}

// ---- checkpoints ---------------------------------------------------------

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void Checkpoint::validate() const {
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) throw CheckpointError("duplicate parameter name '" + e.name + "'");
    if (shape_numel(e.shape) != e.values.size()) {
      throw CheckpointError("parameter '" + e.name + "' has " + std::to_string(e.values.size()) +
                            " values for shape " + shape_string(e.shape));
    }
    for (float v : e.values) {
      if (!std::isfinite(v)) throw CheckpointError("parameter '" + e.name + "' holds a non-finite value");
    }
  }
}

bool Checkpoint::same_layout(const Checkpoint& other) const {
  if (entries.size() != other.entries.size()) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != other.entries[i].name || entries[i].shape != other.entries[i].shape) return false;
  }
  return true;
}

bool Checkpoint::operator==(const Checkpoint& o) const {
  if (fingerprint != o.fingerprint || epoch != o.epoch || contributing_epochs != o.contributing_epochs) return false;
  if (std::bit_cast<std::uint64_t>(val_loss) != std::bit_cast<std::uint64_t>(o.val_loss)) return false;
  if (!same_layout(o)) return false;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& a = entries[i].values;
    const auto& b = o.entries[i].values;
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (std::bit_cast<std::uint32_t>(a[k]) != std::bit_cast<std::uint32_t>(b[k])) return false;
    }
  }
  return true;
}

Checkpoint snapshot(const ParamList<float>& params, std::string fingerprint, int epoch, double val_loss) {
  Checkpoint c;
  c.fingerprint = std::move(fingerprint);
  c.epoch = epoch;
  c.val_loss = val_loss;
  c.entries.reserve(params.size());
  for (const auto& [name, t] : params) {
    const auto d = t.data();
    c.entries.push_back({name, t.shape(), std::vector<float>(d.begin(), d.end())});
  }
  return c;
}

void restore(const Checkpoint& ckpt, const ParamList<float>& params) {
  if (ckpt.entries.size() != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.entries.size()) + " parameters, model has " +
                          std::to_string(params.size()));
  }
  for (const auto& [name, t] : params) {
    const CheckpointEntry* e = ckpt.find(name);
    if (!e) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (e->shape != t.shape()) {
      throw CheckpointError("parameter '" + name + "': checkpoint shape " + shape_string(e->shape) +
                            " vs model shape " + shape_string(t.shape()));
    }
    Tensor<float> dst = t;
    std::copy(e->values.begin(), e->values.end(), dst.mutable_data().begin());
  }
}

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::copy_n(bytes_.data() + pos_, n, static_cast<std::uint8_t*>(dst));
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.validate();
  Writer w;
  w.out.insert(w.out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.str(ckpt.fingerprint);
  w.i32(ckpt.epoch);
  w.f64(ckpt.val_loss);
  w.u32(static_cast<std::uint32_t>(ckpt.contributing_epochs.size()));
  for (int e : ckpt.contributing_epochs) w.i32(e);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u64(d);
    for (float v : e.values) w.f32(v);
  }
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[sizeof kCheckpointMagic];
  r.raw(magic, sizeof magic, "magic");
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected version " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.fingerprint = r.str("fingerprint");
  c.epoch = r.i32("epoch");
  c.val_loss = r.f64("val_loss");
  const std::uint32_t ncontrib = r.u32("contributing epoch count");
  r.need(static_cast<std::size_t>(ncontrib) * 4, "contributing epochs");
  for (std::uint32_t i = 0; i < ncontrib; ++i) c.contributing_epochs.push_back(r.i32("contributing epoch"));
  const std::uint32_t count = r.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str("parameter name");
    const std::uint32_t rank = r.u32("rank");
    r.need(static_cast<std::size_t>(rank) * 8, "dims");
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::uint64_t d = r.u64("dim");
      if (d == 0 || d > (std::uint64_t{1} << 32)) {
        throw CheckpointError("parameter '" + e.name + "' has invalid dimension " + std::to_string(d));
      }
      e.shape.push_back(static_cast<std::size_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel > r.remaining() / 4) {
      throw CheckpointError("checkpoint truncated in values of '" + e.name + "' (shape " + shape_string(e.shape) + ")");
    }
    e.values.resize(numel);
    for (auto& v : e.values) v = std::bit_cast<float>(r.u32("value"));
    c.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  c.validate();
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

std::vector<std::size_t> select_best(std::span<const Checkpoint> candidates, std::size_t k) {
  if (k == 0) throw Error("average_checkpoints: k must be >= 1");
  if (candidates.size() < k) {
    throw Error("average_checkpoints: need at least " + std::to_string(k) + " candidates, got " +
                std::to_string(candidates.size()));
  }
  std::vector<std::size_t> idx(candidates.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = candidates[a];
    const auto& y = candidates[b];
    if (x.val_loss != y.val_loss) return x.val_loss < y.val_loss;
    return x.epoch < y.epoch;
  });
  idx.resize(k);
  return idx;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> candidates, std::size_t k) {
  for (const auto& c : candidates) {
    if (std::isnan(c.val_loss)) throw Error("average_checkpoints: candidate epoch " + std::to_string(c.epoch) + " has no val_loss");
  }
  auto chosen = select_best(candidates, k);
  for (std::size_t i : chosen) {
    if (!candidates[i].same_layout(candidates[chosen.front()])) {
      throw Error("average_checkpoints: candidate epoch " + std::to_string(candidates[i].epoch) +
                  " differs in parameter names or shapes");
    }
  }
  // Sum in epoch order so the result does not depend on candidate order.
  std::sort(chosen.begin(), chosen.end(), [&](std::size_t a, std::size_t b) {
    return candidates[a].epoch < candidates[b].epoch;
  });
  const Checkpoint& first = candidates[chosen.front()];
  Checkpoint out;
  out.fingerprint = first.fingerprint;
  out.epoch = candidates[chosen.back()].epoch;
  for (std::size_t i : chosen) out.contributing_epochs.push_back(candidates[i].epoch);
  out.entries.reserve(first.entries.size());
  for (std::size_t p = 0; p < first.entries.size(); ++p) {
    std::vector<double> acc(first.entries[p].values.size(), 0.0);
    for (std::size_t i : chosen) {
      const auto& v = candidates[i].entries[p].values;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += v[j];
    }
    CheckpointEntry e{first.entries[p].name, first.entries[p].shape, std::vector<float>(acc.size())};
    for (std::size_t j = 0; j < acc.size(); ++j) e.values[j] = static_cast<float>(acc[j] / static_cast<double>(k));
    out.entries.push_back(std::move(e));
  }
  return out;
}

// ---- router pretraining --------------------------------------------------

namespace {

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, "shuffle-epoch-" + std::to_string(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

ConfusionMatrix router_confusion(const RouterClassifierParams<float>& router, std::span<const Example* const> examples,
                                 ExpertScheme scheme) {
  std::vector<std::size_t> truth, pred;
  NoGradGuard guard;
  for (const Example* ex : examples) {
    truth.push_back(scheme_label(ex->domain, scheme));
    pred.push_back(route_with_probs(ex->feats, router, ex->id).decision.expert_index);
  }
  return confusion(truth, pred, scheme_classes(scheme));
}

RouterTrainResult pretrain_router(std::span<const Example* const> train, std::span<const Example* const> heldout,
                                  ExpertScheme scheme, const TrainSchedule& sched, const RouterConfig& cfg) {
  sched.validate();
  cfg.validate();
  const std::size_t classes = scheme_classes(scheme);
  if (cfg.classes != classes) {
    throw Error("router config has " + std::to_string(cfg.classes) + " classes, scheme has " + std::to_string(classes));
  }
  std::vector<std::size_t> train_counts(classes, 0);
  for (const Example* ex : train) ++train_counts[scheme_label(ex->domain, scheme)];
  for (std::size_t c = 0; c < classes; ++c) {
    if (train_counts[c] == 0) {
      throw Error("router training data has no examples of class '" + std::string(scheme_class_name(scheme, c)) + "'");
    }
  }

  std::mt19937_64 init_rng(derive_seed(sched.seed, "router-init"));
  RouterTrainResult result{RouterClassifierParams<float>::init(cfg, init_rng), ConfusionMatrix(classes), 0.0, {}};
  ParamList<float> params;
  result.params.collect("router", params);
  SgdMomentum opt(sched.momentum);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= sched.max_epochs; ++epoch) {
    const auto order = shuffled_order(train.size(), sched.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += sched.batch_size) {
      const std::size_t end = std::min(order.size(), start + sched.batch_size);
      zero_grads(params);
      Tensor<float> loss;
      for (std::size_t i = start; i < end; ++i) {
        const Example* ex = train[order[i]];
        Tensor<float> l = cross_entropy(router_logits(ex->feats, result.params), scheme_label(ex->domain, scheme));
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = scale(loss, 1.0f / static_cast<float>(end - start));
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(end - start);
      loss.backward();
      clip_grad_norm(params, sched.clip_norm);
      opt.step(params, sched.lr_at(++step));
    }
    RouterEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.heldout_accuracy = heldout.empty() ? 0.0 : router_confusion(result.params, heldout, scheme).accuracy();
    result.curve.push_back(rec);
  }
  if (!heldout.empty()) {
    result.confusion = router_confusion(result.params, heldout, scheme);
    result.accuracy = result.confusion.accuracy();
  }
  return result;
}

// ---- ASR training --------------------------------------------------------

double validation_loss(const AsrModel& model, std::span<const Example* const> examples) {
  if (examples.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard guard;
  double total = 0.0;
  for (const Example* ex : examples) {
    const std::array<const Example*, 1> one{ex};
    const auto logits = model_logits(model, one);
    total += static_cast<double>(ctc_loss(logits.front(), std::span<const int>(ex->tokens)).item());
  }
  return total / static_cast<double>(examples.size());
}

TrainResult train_asr(AsrModel& model, std::span<const Example* const> train, std::span<const Example* const> dev,
                      const TrainSchedule& sched, const std::function<void(const EpochRecord&)>& on_epoch) {
  sched.validate();
  model.validate();
  if (train.empty()) throw Error("train_asr: empty training set");
  if (model.learned() && !model.routing->router) throw Error("learned routing requires a pretrained router");
  if (model.routing && model.routing->mode == RoutingMode::Fixed) {
    std::vector<std::size_t> counts(model.num_experts(), 0);
    for (const Example* ex : train) ++counts[scheme_label(ex->domain, model.routing->scheme)];
    for (std::size_t e = 0; e < counts.size(); ++e) {
      if (counts[e] == 0) {
        throw Error("training corpus has no utterances for expert class '" +
                    std::string(scheme_class_name(model.routing->scheme, e)) + "'");
      }
    }
  }

  const ParamList<float> encoder_params = [&] {
    ParamList<float> p;
    model.encoder.collect("encoder", p);
    return p;
  }();
  const ParamList<float> router_params = model.router_parameters();
  const ParamList<float> all_params = model.parameters();
  const std::string fingerprint = model.fingerprint();

  SgdMomentum opt(sched.momentum);
  std::mt19937_64 dropout_rng(derive_seed(sched.seed, "dropout"));
  TrainResult result;
  std::size_t step = 0;
  for (int epoch = 1; epoch <= sched.max_epochs; ++epoch) {
    const bool frozen = sched.router_frozen(epoch);
    if (model.routing) model.routing->router_frozen = frozen;
    const bool router_trains = model.learned() && !frozen;
    const ParamList<float>& trainable = router_trains ? all_params : encoder_params;

    std::vector<std::vector<float>> router_before;
    for (const auto& [name, t] : router_params) router_before.emplace_back(t.data().begin(), t.data().end());

    const auto order = shuffled_order(train.size(), sched.seed, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.router_frozen = frozen;
    double loss_sum = 0.0, norm_sum = 0.0, prob_sum = 0.0;
    std::size_t steps = 0;
    std::vector<RoutingDecision> epoch_decisions;
    for (std::size_t start = 0; start < order.size(); start += sched.batch_size) {
      const std::size_t end = std::min(order.size(), start + sched.batch_size);
      std::vector<const Example*> batch;
      std::vector<Tensor<float>> feats;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(train[order[i]]);
        feats.push_back(batch.back()->feats);
      }
      zero_grads(all_params);
      BatchRoutes routes = route_batch(model, batch, router_trains);
      const RoutingContext<float>* ctx = model.routing ? &*model.routing : nullptr;
      const auto encoded =
          encoder_forward_batch<float>(feats, model.encoder, ctx, routes.decisions, routes.gates, &dropout_rng);
      Tensor<float> loss;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Tensor<float> l = ctc_loss(ctc_head(encoded[i], model.encoder), std::span<const int>(batch[i]->tokens));
        loss = loss.defined() ? add(loss, l) : l;
      }
      loss = scale(loss, 1.0f / static_cast<float>(batch.size()));
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      loss.backward();
      if (!router_params.empty()) rec.router_grad_norm = std::max(rec.router_grad_norm, grad_norm(router_params));
      norm_sum += clip_grad_norm(trainable, sched.clip_norm);
      rec.lr = sched.lr_at(++step);
      opt.step(trainable, rec.lr);
      ++steps;
      for (auto& d : routes.decisions) {
        prob_sum += d.probs.at(d.expert_index);
        epoch_decisions.push_back(std::move(d));
      }
    }
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.grad_norm = norm_sum / static_cast<double>(steps);
    rec.val_loss = validation_loss(model, dev);
    if (model.routing) {
      const UtilizationStats u = utilization_stats(epoch_decisions, model.num_experts());
      rec.util_entropy = u.entropy;
      rec.routing_counts = u.counts;
      rec.max_fraction = u.max_fraction;
      rec.collapsed = u.collapsed;
      rec.mean_selected_prob = prob_sum / static_cast<double>(epoch_decisions.size());
    }
    for (std::size_t p = 0; p < router_params.size(); ++p) {
      const auto now = router_params[p].second.data();
      for (std::size_t i = 0; i < now.size(); ++i) {
        rec.router_delta = std::max(rec.router_delta, std::abs(static_cast<double>(now[i]) - router_before[p][i]));
      }
    }
    if (!std::isfinite(rec.train_loss)) throw Error("training diverged at epoch " + std::to_string(epoch));
    result.checkpoints.push_back(snapshot(all_params, fingerprint, epoch, rec.val_loss));
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_or_nan(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.at(key).get<double>();
}

}  // namespace

std::string loss_curve_csv(std::span<const EpochRecord> curve) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch,train_loss,val_loss,util_entropy\n";
  for (const auto& r : curve) {
    os << r.epoch << ',' << r.train_loss << ',' << r.val_loss << ',';
    if (std::isfinite(r.util_entropy)) os << r.util_entropy;
    os << '\n';
  }
  return os.str();
}

nlohmann::json curve_to_json(std::span<const EpochRecord> curve) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : curve) {
    arr.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"val_loss", number_or_null(r.val_loss)},
                   {"util_entropy", number_or_null(r.util_entropy)},
                   {"routing_counts", r.routing_counts},
                   {"max_fraction", r.max_fraction},
                   {"collapsed", r.collapsed},
                   {"router_frozen", r.router_frozen},
                   {"router_delta", r.router_delta},
                   {"router_grad_norm", r.router_grad_norm},
                   {"mean_selected_prob", number_or_null(r.mean_selected_prob)},
                   {"grad_norm", r.grad_norm},
                   {"lr", r.lr}});
  }
  return arr;
}

std::vector<EpochRecord> curve_from_json(const nlohmann::json& j) {
  std::vector<EpochRecord> out;
  for (const auto& e : j) {
    EpochRecord r;
    r.epoch = e.at("epoch").get<int>();
    r.train_loss = e.at("train_loss").get<double>();
    r.val_loss = number_or_nan(e, "val_loss");
    r.util_entropy = number_or_nan(e, "util_entropy");
    r.routing_counts = e.value("routing_counts", std::vector<std::size_t>{});
    r.max_fraction = e.value("max_fraction", 0.0);
    r.collapsed = e.value("collapsed", false);
    r.router_frozen = e.value("router_frozen", true);
    r.router_delta = e.value("router_delta", 0.0);
    r.router_grad_norm = e.value("router_grad_norm", 0.0);
    r.mean_selected_prob = number_or_nan(e, "mean_selected_prob");
    r.grad_norm = e.value("grad_norm", 0.0);
    r.lr = e.value("lr", 0.0);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace modasr
