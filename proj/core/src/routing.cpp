// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/routing.hpp"

#include <cmath>

namespace modasr {

std::size_t scheme_classes(ExpertScheme scheme) {
  switch (scheme) {
    case ExpertScheme::Two: return 2;
    case ExpertScheme::Three: return 3;
    case ExpertScheme::Five: return 5;
  }
  return 0;
}

ExpertScheme scheme_for_experts(std::size_t experts) {
  switch (experts) {
    case 2: return ExpertScheme::Two;
    case 3: return ExpertScheme::Three;
    case 5: return ExpertScheme::Five;
    default:
      throw Error("experts must be 2, 3 or 5, got " + std::to_string(experts));
  }
}

std::string_view scheme_class_name(ExpertScheme scheme, std::size_t index) {
  static constexpr std::string_view two[] = {"clean", "noise"};
  static constexpr std::string_view three[] = {"clean", "simu", "real"};
  static constexpr std::string_view five[] = {"clean", "bus", "cafe", "pedestrian", "street"};
  if (index >= scheme_classes(scheme)) throw Error("class index out of range for scheme");
  switch (scheme) {
    case ExpertScheme::Two: return two[index];
    case ExpertScheme::Three: return three[index];
    case ExpertScheme::Five: return five[index];
  }
  return "?";
}

std::string_view to_string(RoutingMode mode) { return mode == RoutingMode::Fixed ? "fixed" : "learned"; }

RoutingMode parse_routing_mode(std::string_view s) {
  if (s == "fixed") return RoutingMode::Fixed;
  if (s == "learned") return RoutingMode::Learned;
  throw Error("unknown routing mode '" + std::string(s) + "'");
}

std::size_t scheme_label(const Domain& domain, ExpertScheme scheme) {
  if (domain.clean()) return 0;
  switch (scheme) {
    case ExpertScheme::Two:
      return 1;
    case ExpertScheme::Three:
      return domain.origin == Origin::Simu ? 1 : 2;
    case ExpertScheme::Five:
      switch (domain.noise) {
        case NoiseKind::Bus: return 1;
        case NoiseKind::Cafe: return 2;
        case NoiseKind::Pedestrian: return 3;
        case NoiseKind::Street: return 4;
        case NoiseKind::Clean: return 0;
      }
  }
  return 0;
}

RoutingDecision fixed_route(const Domain& domain, ExpertScheme scheme, std::string utterance_id) {
  RoutingDecision d;
  d.expert_index = scheme_label(domain, scheme);
  d.probs.assign(scheme_classes(scheme), 0.0);
  d.probs[d.expert_index] = 1.0;
  d.utterance_id = std::move(utterance_id);
  return d;
}

template <typename T>
void ExpertLayer<T>::validate() const {
  if (experts.size() < 2) throw Error("expert layer needs at least two experts");
  for (std::size_t e = 1; e < experts.size(); ++e) {
    if (!experts[e].same_shapes(experts[0])) {
      throw ShapeError("expert " + std::to_string(e) + " of layer " + std::to_string(layer_index) +
                       " differs in shape from expert 0");
    }
  }
}

template <typename T>
void RoutingContext<T>::validate(std::size_t num_layers) const {
  if (modular_layers.empty()) throw Error("routing context lists no modular layers");
  for (std::size_t l : modular_layers) {
    if (l >= num_layers) {
      throw Error("modular layer index " + std::to_string(l) + " >= num_layers " + std::to_string(num_layers));
    }
  }
  if (mode == RoutingMode::Learned) {
    if (!router) throw Error("learned routing requires router parameters");
    if (router->num_classes() != num_experts()) {
      throw Error("router has " + std::to_string(router->num_classes()) + " classes but the scheme has " +
                  std::to_string(num_experts()));
    }
  }
}

template <typename T>
std::vector<Tensor<T>> expert_layer_forward(std::span<const Tensor<T>> batch, const ExpertLayer<T>& layer,
                                            const RoutingContext<T>& ctx,
                                            std::span<const RoutingDecision> decisions,
                                            std::span<const Tensor<T>> gates) {
  if (decisions.size() != batch.size()) {
    throw Error("expert layer " + std::to_string(layer.layer_index) + ": routing decisions missing (" +
                std::to_string(decisions.size()) + " for " + std::to_string(batch.size()) + " utterances)");
  }
  if (layer.num_experts() != ctx.num_experts()) {
    throw Error("expert layer " + std::to_string(layer.layer_index) + " has " +
                std::to_string(layer.num_experts()) + " experts but the scheme routes to " +
                std::to_string(ctx.num_experts()));
  }
  if (!gates.empty() && gates.size() != batch.size()) throw Error("one routing gate per utterance required");

  // Gates travel with their utterance so dispatch keeps them aligned.
  struct Item {
    Tensor<T> x;
    Tensor<T> gate;
  };
  std::vector<Item> items;
  items.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) items.push_back({batch[i], gates.empty() ? Tensor<T>{} : gates[i]});

  auto split = dispatch<Item>(items, decisions, layer.num_experts());
  std::vector<std::vector<Item>> results(layer.num_experts());
  for (std::size_t e = 0; e < layer.num_experts(); ++e) {
    for (const Item& it : split.sub_batches[e]) {
      Tensor<T> y = conformer_block(it.x, layer.experts[e]);
      if (it.gate.defined()) y = mul(y, it.gate);
      results[e].push_back({std::move(y), it.gate});
    }
  }
  std::vector<Tensor<T>> out;
  out.reserve(batch.size());
  for (auto& it : aggregate(results, split.order)) out.push_back(std::move(it.x));
  return out;
}

UtilizationStats utilization_from_counts(std::vector<std::size_t> counts) {
  UtilizationStats s;
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total == 0) throw Error("utilization statistics need at least one decision");
  for (auto c : counts) {
    if (c == 0) continue;
    const double f = static_cast<double>(c) / static_cast<double>(total);
    s.entropy -= f * std::log(f);
    s.max_fraction = std::max(s.max_fraction, f);
  }
  s.collapsed = s.max_fraction > kCollapseThreshold;
  s.counts = std::move(counts);
  return s;
}

UtilizationStats utilization_stats(std::span<const RoutingDecision> decisions, std::size_t num_experts) {
  if (decisions.empty()) throw Error("utilization statistics need at least one decision");
  std::vector<std::size_t> counts(num_experts, 0);
  for (const auto& d : decisions) {
    if (d.expert_index >= num_experts) throw Error("decision expert index out of range");
    ++counts[d.expert_index];
  }
  return utilization_from_counts(std::move(counts));
}

template struct ExpertLayer<float>;
template struct ExpertLayer<double>;
template struct RoutingContext<float>;
template struct RoutingContext<double>;
template std::vector<Tensor<float>> expert_layer_forward(std::span<const Tensor<float>>, const ExpertLayer<float>&,
                                                         const RoutingContext<float>&,
                                                         std::span<const RoutingDecision>,
                                                         std::span<const Tensor<float>>);
template std::vector<Tensor<double>> expert_layer_forward(std::span<const Tensor<double>>,
                                                          const ExpertLayer<double>&,
                                                          const RoutingContext<double>&,
                                                          std::span<const RoutingDecision>,
                                                          std::span<const Tensor<double>>);

}  // namespace modasr
