// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/layers.hpp"

#include <cmath>

namespace modasr {

template <typename T>
Tensor<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                         std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return {xavier_uniform<T>({in, out}, in, out, rng), Tensor<T>({out}, T{0}, true)};
}

template <typename T>
Linear<T> Linear<T>::zeros(std::size_t in, std::size_t out) {
  return {Tensor<T>({in, out}, T{0}, true), Tensor<T>({out}, T{0}, true)};
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return add(matmul(x, weight), bias);
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
Norm<T> Norm<T>::init(std::size_t d) {
  return {Tensor<T>({d}, T{1}, true), Tensor<T>({d}, T{0}, true)};
}

template <typename T>
void Norm<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

template struct Linear<float>;
template struct Linear<double>;
template struct Norm<float>;
template struct Norm<double>;
template Tensor<float> xavier_uniform(Shape, std::size_t, std::size_t, std::mt19937_64&);
template Tensor<double> xavier_uniform(Shape, std::size_t, std::size_t, std::mt19937_64&);

}  // namespace modasr
