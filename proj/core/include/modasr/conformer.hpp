// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "modasr/layers.hpp"

namespace modasr {

struct BlockDims {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t kernel_size = 7;

  void validate() const;
};

template <typename T>
struct FeedForwardParams {
  Norm<T> norm;
  Linear<T> in;
  Linear<T> out;
};

template <typename T>
struct AttentionParams {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> output;
};

// pointwise_in maps d -> 2d for the GLU; depthwise is [K, 1, d].
template <typename T>
struct ConvModuleParams {
  Linear<T> pointwise_in;
  Tensor<T> depthwise;
  Tensor<T> depthwise_bias;
  Linear<T> pointwise_out;
};

// One conformer block: half-step FFN, self-attention, convolution, half-step
// FFN, final layernorm. Each residual branch is pre-normalized.
template <typename T>
struct ConformerBlockParams {
  BlockDims dims;
  FeedForwardParams<T> ffn1;
  Norm<T> attention_norm;
  AttentionParams<T> attention;
  Norm<T> conv_norm;
  ConvModuleParams<T> conv;
  FeedForwardParams<T> ffn2;
  Norm<T> final_norm;

  static ConformerBlockParams init(const BlockDims& dims, std::mt19937_64& rng);
  // All weights and biases zero, norms at gamma = 1, beta = 0.
  static ConformerBlockParams zeros(const BlockDims& dims);

  void collect(const std::string& prefix, ParamList<T>& out) const;
  ConformerBlockParams clone() const;
  bool same_shapes(const ConformerBlockParams& other) const;
};

// LN -> linear -> swish -> linear.
template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p);

// Multi-head scaled dot-product self-attention over [T, d]. When `weights`
// is given, the per-head [T, T] attention matrices are appended to it.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads,
               std::vector<Tensor<T>>* weights = nullptr);

// pointwise d->2d, GLU, depthwise conv (same padding), swish, pointwise d->d.
template <typename T>
Tensor<T> conv_module(const Tensor<T>& x, const ConvModuleParams<T>& p);

template <typename T>
Tensor<T> conformer_block(const Tensor<T>& x, const ConformerBlockParams<T>& p);

// Sinusoidal absolute position table [length, d].
template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d);

}  // namespace modasr
