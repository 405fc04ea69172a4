// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "modasr/features.hpp"
#include "modasr/layers.hpp"

namespace modasr {

struct RoutingDecision {
  std::size_t expert_index = 0;
  std::vector<double> probs;
  std::string utterance_id;
};

// Argmax with ties resolved to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

struct RouterConfig {
  std::size_t feat_dim = 40;
  std::size_t channels = 32;
  std::size_t kernel_size = 5;
  std::size_t pool = 2;
  std::size_t classes = 2;

  void validate() const;
};

template <typename T>
struct RouterConvBlock {
  Tensor<T> kernel;  // [K, C_in, C_out]
  Tensor<T> bias;    // [C_out]
};

// Three {conv1d, relu, max-pool over time} blocks on the log-mel frames,
// a time-global mean, then a linear map to one logit per expert.
template <typename T>
struct RouterClassifierParams {
  RouterConfig config;
  Norm<T> input_norm;
  std::array<RouterConvBlock<T>, 3> blocks;
  Linear<T> head;

  static RouterClassifierParams init(const RouterConfig& cfg, std::mt19937_64& rng);

  std::size_t num_classes() const { return head.out_features(); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
  RouterClassifierParams clone() const;
};

// [T, F] features -> [1, E] logits.
template <typename T>
Tensor<T> router_logits(const Tensor<T>& feats, const RouterClassifierParams<T>& router);

template <typename T>
struct RouterOutput {
  RoutingDecision decision;
  Tensor<T> probs;  // [1, E], differentiable w.r.t. the router when grad mode is on
};

template <typename T>
RouterOutput<T> route_with_probs(const Tensor<T>& feats, const RouterClassifierParams<T>& router,
                                 const std::string& utterance_id = {});

RoutingDecision learned_route(const FeatureSequence& feats,
                              const RouterClassifierParams<float>& router);

}  // namespace modasr
