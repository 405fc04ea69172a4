// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace modasr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

std::size_t ctc_min_frames(std::span<const int> targets) {
  std::size_t n = targets.size();
  for (std::size_t i = 1; i < targets.size(); ++i) {
    if (targets[i] == targets[i - 1]) ++n;
  }
  return n;
}

template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& logits, std::span<const int> targets) {
  if (logits.rank() != 2) {
    throw ShapeError("ctc_loss expects logits [T, V], got " + shape_string(logits.shape()));
  }
  const std::size_t frames = logits.dim(0), vocab = logits.dim(1);
  for (int t : targets) {
    if (t <= kBlank || static_cast<std::size_t>(t) >= vocab) {
      throw Error("ctc target id " + std::to_string(t) + " outside [1, " +
                  std::to_string(vocab) + ")");
    }
  }
  if (ctc_min_frames(targets) > frames) {
    throw Error("ctc target of length " + std::to_string(targets.size()) + " needs at least " +
                std::to_string(ctc_min_frames(targets)) + " frames, got " +
                std::to_string(frames));
  }

  // Row-wise log-softmax.
  const auto u = logits.data();
  std::vector<double> logp(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    double mx = kNegInf;
    for (std::size_t k = 0; k < vocab; ++k) mx = std::max(mx, static_cast<double>(u[t * vocab + k]));
    double total = 0.0;
    for (std::size_t k = 0; k < vocab; ++k) total += std::exp(static_cast<double>(u[t * vocab + k]) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t k = 0; k < vocab; ++k) logp[t * vocab + k] = static_cast<double>(u[t * vocab + k]) - lse;
  }

  // Blank-interleaved target.
  const std::size_t S = 2 * targets.size() + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < targets.size(); ++i) ext[2 * i + 1] = targets[i];
  auto can_skip = [&ext](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };
  auto emit = [&](std::size_t t, std::size_t s) { return logp[t * vocab + static_cast<std::size_t>(ext[s])]; };

  std::vector<double> alpha(frames * S, kNegInf), beta(frames * S, kNegInf);
  alpha[0] = emit(0, 0);
  if (S > 1) alpha[1] = emit(0, 1);
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (can_skip(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + emit(t, s);
    }
  }
  const std::size_t last = frames - 1;
  beta[last * S + S - 1] = emit(last, S - 1);
  if (S > 1) beta[last * S + S - 2] = emit(last, S - 2);
  for (std::size_t t = last; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double b = beta[(t + 1) * S + s];
      if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
      if (s + 2 < S && ext[s + 2] != kBlank && ext[s + 2] != ext[s]) {
        b = log_add(b, beta[(t + 1) * S + s + 2]);
      }
      beta[t * S + s] = b == kNegInf ? kNegInf : b + emit(t, s);
    }
  }
  double log_likelihood = alpha[last * S + S - 1];
  if (S > 1) log_likelihood = log_add(log_likelihood, alpha[last * S + S - 2]);

  // d(-log p)/du[t,k] = softmax[t,k] - sum_{s: ext[s]==k} alpha*beta / (y p).
  std::vector<double> dlogits(frames * vocab);
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> occupancy(vocab, kNegInf);
    for (std::size_t s = 0; s < S; ++s) {
      const double ab = alpha[t * S + s] + beta[t * S + s];
      if (ab == kNegInf) continue;
      auto& o = occupancy[static_cast<std::size_t>(ext[s])];
      o = log_add(o, ab - emit(t, s));
    }
    for (std::size_t k = 0; k < vocab; ++k) {
      const double post = occupancy[k] == kNegInf ? 0.0 : std::exp(occupancy[k] - log_likelihood);
      dlogits[t * vocab + k] = std::exp(logp[t * vocab + k]) - post;
    }
  }

  return Tensor<T>::from_op(
      "ctc_loss", Shape{1}, {static_cast<T>(-log_likelihood)}, {logits},
      [dlogits = std::move(dlogits)](Node<T>& self) {
        auto* g = self.input_grad(0);
        const double up = static_cast<double>(self.grad[0]);
        for (std::size_t i = 0; i < dlogits.size(); ++i) (*g)[i] += static_cast<T>(up * dlogits[i]);
      });
}

template <typename T>
std::vector<int> ctc_greedy_decode(const Tensor<T>& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("ctc_greedy_decode expects [T, V], got " + shape_string(logits.shape()));
  }
  const std::size_t frames = logits.dim(0), vocab = logits.dim(1);
  const auto v = logits.data();
  std::vector<int> out;
  int prev = kBlank;
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < vocab; ++k) {
      if (v[t * vocab + k] > v[t * vocab + best]) best = k;
    }
    const int label = static_cast<int>(best);
    if (label != kBlank && label != prev) out.push_back(label);
    prev = label;
  }
  return out;
}

template Tensor<float> ctc_loss(const Tensor<float>&, std::span<const int>);
template Tensor<double> ctc_loss(const Tensor<double>&, std::span<const int>);
template std::vector<int> ctc_greedy_decode(const Tensor<float>&);
template std::vector<int> ctc_greedy_decode(const Tensor<double>&);

}  // namespace modasr
