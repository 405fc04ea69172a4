// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "modasr/tensor.hpp"

namespace modasr::testing {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  // ||a - n|| / max(||a||, ||n||) over the concatenated gradient.
  double norm_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error with a floor so entries whose true gradient is ~0 (below
// what a step of `floor` can resolve) are judged on absolute deviation.
inline double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central finite differences against backward() for every element of every
// tensor in `inputs`. `loss` must rebuild the scalar from the current values.
template <typename T>
GradCheckResult grad_check(const std::vector<Tensor<T>>& inputs, const std::function<Tensor<T>()>& loss,
                           double eps = 1e-5) {
  for (auto t : inputs) t.zero_grad();
  Tensor<T> l = loss();
  l.backward();
  std::vector<std::vector<T>> analytic;
  for (const auto& t : inputs) analytic.push_back(t.grad());

  GradCheckResult r;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<T> t = inputs[k];
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + static_cast<T>(eps);
      const double up = static_cast<double>(loss().item());
      values[i] = saved - static_cast<T>(eps);
      const double down = static_cast<double>(loss().item());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = static_cast<double>(analytic[k][i]);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(a, numeric, eps));
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - numeric));
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++r.checked;
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  r.norm_rel_error = scale > 0.0 ? std::sqrt(diff2) / scale : std::sqrt(diff2);
  return r;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero, for ops with a kink at the origin.
template <typename T>
Tensor<T> random_away_from_zero(Shape shape, std::mt19937_64& rng, double margin = 0.05) {
  std::uniform_real_distribution<double> u(margin, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(sign(rng) ? u(rng) : -u(rng));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

}  // namespace modasr::testing
