// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "modasr/ops.hpp"
#include "modasr/tensor.hpp"

namespace modasr {

// Named handles onto a model's trainable tensors, in a stable order.
template <typename T>
using ParamList = std::vector<std::pair<std::string, Tensor<T>>>;

// y = x W + b with W stored as [in, out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  static Linear zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<T> operator()(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Linear clone() const { return {weight.clone(), bias.clone()}; }
};

template <typename T>
struct Norm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static Norm init(std::size_t d);

  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Norm clone() const { return {gamma.clone(), beta.clone()}; }
};

// Xavier-uniform draw for a tensor with the given fan-in/fan-out.
template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng);

extern template struct Linear<float>;
extern template struct Linear<double>;
extern template struct Norm<float>;
extern template struct Norm<double>;

}  // namespace modasr
