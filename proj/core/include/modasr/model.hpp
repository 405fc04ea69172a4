// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "modasr/corpus.hpp"
#include "modasr/encoder.hpp"

namespace modasr {

// Encoder plus optional routing. Without routing the model is the baseline.
struct AsrModel {
  EncoderParams<float> encoder;
  std::optional<RoutingContext<float>> routing;

  static AsrModel baseline(const EncoderConfig& cfg, std::uint64_t seed);
  // Experts at `modular_layers` (0-based); the scheme follows the expert count.
  static AsrModel modular(const EncoderConfig& cfg, std::uint64_t seed, RoutingMode mode,
                          const std::set<std::size_t>& modular_layers, std::size_t experts,
                          ExpertInit init = ExpertInit::Independent,
                          std::optional<RouterClassifierParams<float>> router = std::nullopt);

  void validate() const;
  bool routed() const { return routing.has_value(); }
  bool learned() const { return routing && routing->mode == RoutingMode::Learned; }
  std::size_t num_experts() const { return routing ? routing->num_experts() : 1; }

  // Encoder parameters under "encoder.", router parameters under "router.".
  ParamList<float> parameters() const;
  ParamList<float> router_parameters() const;
  std::string fingerprint() const;
};

// Per-batch routing. When `with_grad` is set and routing is learned, gates
// hold each utterance's selected probability as a differentiable scalar.
struct BatchRoutes {
  std::vector<RoutingDecision> decisions;
  std::vector<Tensor<float>> gates;
};

BatchRoutes route_batch(const AsrModel& model, std::span<const Example* const> batch, bool with_grad);

// CTC logits per utterance (hard routing, no gates).
std::vector<Tensor<float>> model_logits(const AsrModel& model, std::span<const Example* const> batch,
                                        std::vector<RoutingDecision>* decisions = nullptr);

}  // namespace modasr
