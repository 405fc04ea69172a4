// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/model.hpp"

#include <sstream>

namespace modasr {

AsrModel AsrModel::baseline(const EncoderConfig& cfg, std::uint64_t seed) {
  AsrModel m;
  m.encoder = EncoderParams<float>::init(cfg, seed);
  return m;
}

AsrModel AsrModel::modular(const EncoderConfig& cfg, std::uint64_t seed, RoutingMode mode,
                           const std::set<std::size_t>& modular_layers, std::size_t experts, ExpertInit init,
                           std::optional<RouterClassifierParams<float>> router) {
  RoutingContext<float> ctx;
  ctx.mode = mode;
  ctx.modular_layers = modular_layers;
  ctx.scheme = scheme_for_experts(experts);
  ctx.router = std::move(router);
  ctx.validate(cfg.num_layers);
  AsrModel m;
  m.encoder = EncoderParams<float>::init(cfg, seed, modular_layers, experts, init);
  m.routing = std::move(ctx);
  m.validate();
  return m;
}

void AsrModel::validate() const {
  encoder.config.validate();
  if (encoder.layers.size() != encoder.config.num_layers) throw Error("encoder layer count differs from config");
  const auto modular = encoder.modular_layers();
  if (!routing) {
    if (!modular.empty()) throw Error("model has expert layers but no routing context");
    return;
  }
  routing->validate(encoder.config.num_layers);
  if (routing->modular_layers != modular) throw Error("routing context and expert layers disagree");
  for (std::size_t l : modular) {
    const auto& layer = std::get<ExpertLayer<float>>(encoder.layers[l]);
    layer.validate();
    if (layer.num_experts() != routing->num_experts()) {
      throw Error("layer " + std::to_string(l) + " has " + std::to_string(layer.num_experts()) +
                  " experts, scheme expects " + std::to_string(routing->num_experts()));
    }
  }
  if (routing->router && routing->router->config.feat_dim != encoder.config.feat_dim) {
    throw Error("router feature dimension differs from the encoder's");
  }
}

ParamList<float> AsrModel::parameters() const {
  ParamList<float> out;
  encoder.collect("encoder", out);
  if (routing && routing->router) routing->router->collect("router", out);
  return out;
}

ParamList<float> AsrModel::router_parameters() const {
  ParamList<float> out;
  if (routing && routing->router) routing->router->collect("router", out);
  return out;
}

std::string AsrModel::fingerprint() const {
  std::ostringstream os;
  os << encoder.config.fingerprint();
  if (!routing) {
    os << "|baseline";
    return os.str();
  }
  os << '|' << to_string(routing->mode) << "-e" << routing->num_experts() << "-layers";
  bool first = true;
  for (std::size_t l : routing->modular_layers) {
    os << (first ? "" : ",") << l + 1;
    first = false;
  }
  if (routing->router) {
    const auto& rc = routing->router->config;
    os << "|router-c" << rc.channels << "-k" << rc.kernel_size << "-p" << rc.pool;
  }
  return os.str();
}

BatchRoutes route_batch(const AsrModel& model, std::span<const Example* const> batch, bool with_grad) {
  BatchRoutes out;
  if (!model.routing) return out;
  const auto& ctx = *model.routing;
  out.decisions.reserve(batch.size());
  if (ctx.mode == RoutingMode::Fixed) {
    for (const Example* ex : batch) out.decisions.push_back(fixed_route(ex->domain, ctx.scheme, ex->id));
    return out;
  }
  if (!ctx.router) throw Error("learned routing requires router parameters");
  for (const Example* ex : batch) {
    if (with_grad) {
      auto r = route_with_probs(ex->feats, *ctx.router, ex->id);
      out.gates.push_back(select(r.probs, r.decision.expert_index));
      out.decisions.push_back(std::move(r.decision));
    } else {
      NoGradGuard guard;
      out.decisions.push_back(route_with_probs(ex->feats, *ctx.router, ex->id).decision);
    }
  }
  return out;
}

std::vector<Tensor<float>> model_logits(const AsrModel& model, std::span<const Example* const> batch,
                                        std::vector<RoutingDecision>* decisions) {
  BatchRoutes routes = route_batch(model, batch, false);
  std::vector<Tensor<float>> feats;
  feats.reserve(batch.size());
  for (const Example* ex : batch) feats.push_back(ex->feats);
  const RoutingContext<float>* ctx = model.routing ? &*model.routing : nullptr;
  auto encoded = encoder_forward_batch<float>(feats, model.encoder, ctx, routes.decisions);
  std::vector<Tensor<float>> logits;
  logits.reserve(encoded.size());
  for (const auto& e : encoded) logits.push_back(ctc_head(e, model.encoder));
  if (decisions) *decisions = std::move(routes.decisions);
  return logits;
}

}  // namespace modasr
