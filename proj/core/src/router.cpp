// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/router.hpp"

namespace modasr {

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void RouterConfig::validate() const {
  if (feat_dim == 0 || channels == 0 || kernel_size == 0 || pool == 0) {
    throw Error("router config: dimensions must be positive");
  }
  if (classes < 2) throw Error("router config: need at least two classes");
}

template <typename T>
RouterClassifierParams<T> RouterClassifierParams<T>::init(const RouterConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  RouterClassifierParams p;
  p.config = cfg;
  p.input_norm = Norm<T>::init(cfg.feat_dim);
  std::size_t in = cfg.feat_dim;
  for (auto& b : p.blocks) {
    b.kernel = xavier_uniform<T>({cfg.kernel_size, in, cfg.channels}, cfg.kernel_size * in,
                                 cfg.kernel_size * cfg.channels, rng);
    b.bias = Tensor<T>({cfg.channels}, T{0}, true);
    in = cfg.channels;
  }
  p.head = Linear<T>::init(cfg.channels, cfg.classes, rng);
  return p;
}

template <typename T>
void RouterClassifierParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  input_norm.collect(prefix + ".input_norm", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = prefix + ".blocks." + std::to_string(i);
    out.emplace_back(b + ".conv.weight", blocks[i].kernel);
    out.emplace_back(b + ".conv.bias", blocks[i].bias);
  }
  head.collect(prefix + ".head", out);
}

template <typename T>
RouterClassifierParams<T> RouterClassifierParams<T>::clone() const {
  RouterClassifierParams p;
  p.config = config;
  p.input_norm = input_norm.clone();
  for (std::size_t i = 0; i < blocks.size(); ++i) p.blocks[i] = {blocks[i].kernel.clone(), blocks[i].bias.clone()};
  p.head = head.clone();
  return p;
}

template <typename T>
Tensor<T> router_logits(const Tensor<T>& feats, const RouterClassifierParams<T>& router) {
  if (feats.rank() != 2 || feats.dim(1) != router.config.feat_dim) {
    throw ShapeError("router expects [T, " + std::to_string(router.config.feat_dim) + "] features, got " +
                     shape_string(feats.shape()));
  }
  Tensor<T> h = router.input_norm(feats);
  for (const auto& b : router.blocks) {
    h = max_pool_rows(relu(add(conv1d(h, b.kernel, 1, Padding::Same), b.bias)), router.config.pool);
  }
  return router.head(mean_rows(h));
}

template <typename T>
RouterOutput<T> route_with_probs(const Tensor<T>& feats, const RouterClassifierParams<T>& router,
                                 const std::string& utterance_id) {
  RouterOutput<T> out;
  out.probs = softmax(router_logits(feats, router), -1);
  const auto p = out.probs.data();
  out.decision.probs.assign(p.begin(), p.end());
  out.decision.expert_index = argmax_lowest(out.decision.probs);
  out.decision.utterance_id = utterance_id;
  return out;
}

RoutingDecision learned_route(const FeatureSequence& feats, const RouterClassifierParams<float>& router) {
  NoGradGuard no_grad;
  return route_with_probs(feats.frames, router, feats.utterance_id).decision;
}

template struct RouterClassifierParams<float>;
template struct RouterClassifierParams<double>;
template Tensor<float> router_logits(const Tensor<float>&, const RouterClassifierParams<float>&);
template Tensor<double> router_logits(const Tensor<double>&, const RouterClassifierParams<double>&);
template RouterOutput<float> route_with_probs(const Tensor<float>&, const RouterClassifierParams<float>&,
                                              const std::string&);
template RouterOutput<double> route_with_probs(const Tensor<double>&, const RouterClassifierParams<double>&,
                                               const std::string&);

}  // namespace modasr
