// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "modasr/tensor.hpp"

namespace modasr {

inline constexpr int kBlank = 0;

// Smallest frame count that admits an alignment: one frame per label plus a
// separating blank between each pair of equal neighbours.
std::size_t ctc_min_frames(std::span<const int> targets);

// -log p(targets | logits) for logits [T, V] (unnormalized), blank index 0.
// Forward-backward runs in log space at double precision; the gradient
// flows back to `logits`.
template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& logits, std::span<const int> targets);

// Frame argmax (ties to the lowest index), collapse repeats, drop blanks.
template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& logits);

}  // namespace modasr
