// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modasr/eval.hpp"
#include "modasr/model.hpp"

namespace modasr {

struct TrainSchedule {
  int max_epochs = 20;
  int warmup_steps = 100;
  double peak_lr = 0.05;
  std::size_t batch_size = 8;
  int router_frozen_epochs = 0;  // epochs 1..router_frozen_epochs keep the router fixed
  std::uint64_t seed = 1;
  double momentum = 0.9;
  double clip_norm = 5.0;

  void validate() const;
  // Linear warmup to peak_lr, then peak_lr * sqrt(warmup / step). Steps are 1-based.
  double lr_at(std::size_t step) const;
  bool router_frozen(int epoch) const { return epoch <= router_frozen_epochs; }
};

nlohmann::json to_json(const TrainSchedule& s);
TrainSchedule train_schedule_from_json(const nlohmann::json& j, TrainSchedule defaults = {});

// Gradient descent with momentum: v = mu * v + g, p -= lr * v.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}
  void step(const ParamList<float>& params, double lr);

 private:
  double momentum_;
  std::map<std::string, std::vector<float>> velocity_;
};

double grad_norm(const ParamList<float>& params);
// Scales gradients so their global L2 norm is at most max_norm; returns the
// norm before clipping.
double clip_grad_norm(const ParamList<float>& params, double max_norm);
void zero_grads(const ParamList<float>& params);

class CheckpointError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'D', 'A', 'S', 'R', 'C', 'K'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string fingerprint;
  int epoch = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> contributing_epochs;  // set on averaged checkpoints
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
  void validate() const;  // unique names, sizes match shapes, finite values
  bool same_layout(const Checkpoint& other) const;
  // Bit-exact comparison, val_loss included.
  bool operator==(const Checkpoint& other) const;
};

Checkpoint snapshot(const ParamList<float>& params, std::string fingerprint, int epoch, double val_loss);
// Copies checkpoint values into matching parameters; names and shapes must agree.
void restore(const Checkpoint& ckpt, const ParamList<float>& params);

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Mean of the k candidates with lowest val_loss (ties to the earlier epoch).
Checkpoint average_checkpoints(std::span<const Checkpoint> candidates, std::size_t k);
// Indices of the k candidates average_checkpoints would use, in selection order.
std::vector<std::size_t> select_best(std::span<const Checkpoint> candidates, std::size_t k);

struct RouterEpoch {
  int epoch = 0;
  double train_loss = 0.0;
  double heldout_accuracy = 0.0;
};

struct RouterTrainResult {
  RouterClassifierParams<float> params;
  ConfusionMatrix confusion;  // on the held-out examples
  double accuracy = 0.0;
  std::vector<RouterEpoch> curve;
};

// Cross-entropy training of the router classifier on labels given by the
// scheme's fixed routing of each example's domain.
RouterTrainResult pretrain_router(std::span<const Example* const> train, std::span<const Example* const> heldout,
                                  ExpertScheme scheme, const TrainSchedule& sched, const RouterConfig& cfg);

ConfusionMatrix router_confusion(const RouterClassifierParams<float>& router, std::span<const Example* const> examples,
                                 ExpertScheme scheme);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double util_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN without routing
  std::vector<std::size_t> routing_counts;
  double max_fraction = 0.0;
  bool collapsed = false;
  bool router_frozen = true;
  double router_delta = 0.0;      // max |change| of any router parameter over the epoch
  double router_grad_norm = 0.0;  // max per-step L2 norm of router gradients
  double mean_selected_prob = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;  // mean pre-clip global norm
  double lr = 0.0;         // at the last step of the epoch
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;  // one per epoch
  std::vector<EpochRecord> curve;
};

// Mean CTC loss with hard routing and no gradient.
double validation_loss(const AsrModel& model, std::span<const Example* const> examples);

TrainResult train_asr(AsrModel& model, std::span<const Example* const> train, std::span<const Example* const> dev,
                      const TrainSchedule& sched, const std::function<void(const EpochRecord&)>& on_epoch = {});

// epoch,train_loss,val_loss,util_entropy
std::string loss_curve_csv(std::span<const EpochRecord> curve);
nlohmann::json curve_to_json(std::span<const EpochRecord> curve);
std::vector<EpochRecord> curve_from_json(const nlohmann::json& j);

}  // namespace modasr
