// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "modasr/conformer.hpp"
#include "modasr/routing.hpp"

namespace modasr {

struct EncoderConfig {
  std::size_t feat_dim = 40;
  std::size_t num_layers = 4;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t kernel_size = 7;
  std::size_t vocab_size = 10;  // includes the blank
  std::size_t subsampling = 2;
  std::size_t frontend_kernel = 3;
  double dropout = 0.0;  // applied only when a forward pass is given an rng

  void validate() const;
  BlockDims block_dims() const { return {d_model, heads, ffn_dim, kernel_size}; }
  std::size_t output_frames(std::size_t input_frames) const {
    return (input_frames + subsampling - 1) / subsampling;
  }
  std::string fingerprint() const;
};

enum class ExpertInit { Independent, Clone };

template <typename T>
using EncoderLayer = std::variant<ConformerBlockParams<T>, ExpertLayer<T>>;

// Front-end (per-frame layernorm, strided conv F -> d, swish, sinusoidal
// positions), the conformer stack and the CTC projection.
template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Norm<T> input_norm;
  Tensor<T> frontend_kernel;  // [frontend_kernel, F, d]
  Tensor<T> frontend_bias;    // [d]
  std::vector<EncoderLayer<T>> layers;
  Linear<T> ctc_head;

  // Every random stream is derived from `seed` per layer (and per expert),
  // so a modular model shares its non-modular initialization with the
  // baseline built from the same seed, and expert 0 matches the baseline
  // block at its position. Clone mode copies expert 0 into all experts.
  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed,
                            const std::set<std::size_t>& modular_layers = {}, std::size_t experts = 0,
                            ExpertInit mode = ExpertInit::Independent);
  // Zero weights everywhere, unit layernorm gains.
  static EncoderParams zeros(const EncoderConfig& cfg);

  bool is_modular(std::size_t layer) const;
  std::set<std::size_t> modular_layers() const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  EncoderParams clone() const;
};

template <typename T>
Tensor<T> encoder_frontend(const Tensor<T>& feats, const EncoderParams<T>& p);

// Encodes a batch of [T_i, F] feature matrices into [ceil(T_i / s), d].
// `ctx` may be null only for an all-baseline parameter set. `decisions`
// holds one decision per utterance, shared by every modular layer.
template <typename T>
std::vector<Tensor<T>> encoder_forward_batch(std::span<const Tensor<T>> feats, const EncoderParams<T>& p,
                                             const RoutingContext<T>* ctx,
                                             std::span<const RoutingDecision> decisions,
                                             std::span<const Tensor<T>> gates = {},
                                             std::mt19937_64* dropout_rng = nullptr);

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& feats, const EncoderParams<T>& p,
                          const RoutingContext<T>* ctx = nullptr, const RoutingDecision* decision = nullptr);

// [T', d] -> [T', V] logits.
template <typename T>
Tensor<T> ctc_head(const Tensor<T>& encoded, const EncoderParams<T>& p);

}  // namespace modasr
