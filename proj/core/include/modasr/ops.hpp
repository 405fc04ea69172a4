// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "modasr/tensor.hpp"

namespace modasr {

// Binary ops follow numpy broadcasting over trailing dimensions.
enum class ElementOp { Add, Mul, Sub, Swish, Relu, Log, Exp };

template <typename T>
Tensor<T> elementwise(ElementOp op, const Tensor<T>& a, const Tensor<T>* b = nullptr);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> swish(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);

// [m,k]·[k,n] or batched [b,m,k]·[b,k,n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis);

// Normalizes over the last axis, then applies gamma/beta of length d.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

enum class Padding { Same, Valid };

// x: [T, C_in], kernel: [K, C_in / groups, C_out]. Same padding keeps
// ceil(T / stride) frames, left pad (K - 1) / 2.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& kernel, int stride = 1,
                 Padding padding = Padding::Same, int groups = 1);

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, int stride,
                                 Padding padding);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// [T, C] -> [1, C]
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);
// Non-overlapping max pooling over rows of [T, C]; the last window may be short.
template <typename T>
Tensor<T> max_pool_rows(const Tensor<T>& x, std::size_t window);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// Columns [begin, begin + count) of a [T, C] tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
// Single element as a scalar tensor.
template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t flat_index);

// Inverted dropout; identity when p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng);

// -log softmax(logits)[label] for a [1, E] or [E] logit vector.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::size_t label);

}  // namespace modasr
