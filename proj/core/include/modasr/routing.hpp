// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "modasr/conformer.hpp"
#include "modasr/features.hpp"
#include "modasr/router.hpp"

namespace modasr {

enum class RoutingMode { Fixed, Learned };

// Expert class sets: Two {clean, noise}, Three {clean, simu, real},
// Five {clean, bus, cafe, pedestrian, street}.
enum class ExpertScheme { Two, Three, Five };

std::size_t scheme_classes(ExpertScheme scheme);
ExpertScheme scheme_for_experts(std::size_t experts);
std::string_view scheme_class_name(ExpertScheme scheme, std::size_t index);
std::string_view to_string(RoutingMode mode);
RoutingMode parse_routing_mode(std::string_view s);

// Class index of a domain under a scheme.
std::size_t scheme_label(const Domain& domain, ExpertScheme scheme);

RoutingDecision fixed_route(const Domain& domain, ExpertScheme scheme, std::string utterance_id = {});

// A modular layer: E interchangeable conformer blocks at one encoder position.
template <typename T>
struct ExpertLayer {
  std::vector<ConformerBlockParams<T>> experts;
  std::size_t layer_index = 0;

  std::size_t num_experts() const { return experts.size(); }
  void validate() const;
};

template <typename T>
struct RoutingContext {
  RoutingMode mode = RoutingMode::Fixed;
  std::set<std::size_t> modular_layers;  // 0-based encoder positions
  ExpertScheme scheme = ExpertScheme::Two;
  std::optional<RouterClassifierParams<T>> router;
  bool router_frozen = true;

  std::size_t num_experts() const { return scheme_classes(scheme); }
  void validate(std::size_t num_layers) const;
};

// Where each input item went: slots[i] = (expert, position in that sub-batch).
struct OrderMap {
  std::vector<std::pair<std::size_t, std::size_t>> slots;
  std::vector<std::size_t> sizes;
};

template <typename Item>
struct Dispatched {
  std::vector<std::vector<Item>> sub_batches;
  OrderMap order;
};

// Splits a batch by expert, keeping the original relative order inside
// every sub-batch. Empty sub-batches are legal.
template <typename Item>
Dispatched<Item> dispatch(std::span<const Item> batch, std::span<const RoutingDecision> decisions,
                          std::size_t num_experts) {
  if (batch.size() != decisions.size()) {
    throw Error("dispatch: " + std::to_string(batch.size()) + " items but " +
                std::to_string(decisions.size()) + " routing decisions");
  }
  Dispatched<Item> out;
  out.sub_batches.resize(num_experts);
  out.order.sizes.assign(num_experts, 0);
  out.order.slots.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t e = decisions[i].expert_index;
    if (e >= num_experts) {
      throw Error("dispatch: expert index " + std::to_string(e) + " >= " + std::to_string(num_experts) +
                  " experts");
    }
    out.order.slots.emplace_back(e, out.sub_batches[e].size());
    out.sub_batches[e].push_back(batch[i]);
    ++out.order.sizes[e];
  }
  return out;
}

// Inverse of dispatch: output i is the result computed for input item i.
template <typename Item>
std::vector<Item> aggregate(const std::vector<std::vector<Item>>& per_expert, const OrderMap& order) {
  if (per_expert.size() != order.sizes.size()) {
    throw Error("aggregate: " + std::to_string(per_expert.size()) + " expert outputs but order map has " +
                std::to_string(order.sizes.size()));
  }
  for (std::size_t e = 0; e < per_expert.size(); ++e) {
    if (per_expert[e].size() != order.sizes[e]) {
      throw Error("aggregate: expert " + std::to_string(e) + " returned " + std::to_string(per_expert[e].size()) +
                  " outputs, expected " + std::to_string(order.sizes[e]));
    }
  }
  std::vector<Item> out;
  out.reserve(order.slots.size());
  for (const auto& [e, pos] : order.slots) out.push_back(per_expert[e][pos]);
  return out;
}

// Runs each utterance through exactly one expert. When `gates` is given
// (unfrozen learned routing during training), gates[i] is the scalar
// routing probability of the chosen expert and scales its output.
template <typename T>
std::vector<Tensor<T>> expert_layer_forward(std::span<const Tensor<T>> batch, const ExpertLayer<T>& layer,
                                            const RoutingContext<T>& ctx,
                                            std::span<const RoutingDecision> decisions,
                                            std::span<const Tensor<T>> gates = {});

struct UtilizationStats {
  std::vector<std::size_t> counts;
  double entropy = 0.0;  // nats
  double max_fraction = 0.0;
  bool collapsed = false;  // max_fraction > 0.99
};

inline constexpr double kCollapseThreshold = 0.99;

UtilizationStats utilization_from_counts(std::vector<std::size_t> counts);
UtilizationStats utilization_stats(std::span<const RoutingDecision> decisions, std::size_t num_experts);

}  // namespace modasr
