// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/encoder.hpp"

#include <sstream>

#include "modasr/seed.hpp"

namespace modasr {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw Error("num_layers: must be >= 1");
  if (vocab_size < 2) throw Error("vocab_size: must count the blank plus at least one token");
  if (feat_dim == 0) throw Error("feat_dim: must be positive");
  if (subsampling == 0) throw Error("subsampling: must be positive");
  if (frontend_kernel == 0) throw Error("frontend_kernel: must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout: must be in [0, 1)");
  block_dims().validate();
}

std::string EncoderConfig::fingerprint() const {
  std::ostringstream os;
  os << "enc-F" << feat_dim << "-L" << num_layers << "-d" << d_model << "-h" << heads << "-ff" << ffn_dim
     << "-k" << kernel_size << "-V" << vocab_size << "-s" << subsampling << "-fk" << frontend_kernel;
  if (dropout > 0.0) os << "-p" << dropout;
  return os.str();
}

template <typename T>
EncoderParams<T> EncoderParams<T>::init(const EncoderConfig& cfg, std::uint64_t seed,
                                        const std::set<std::size_t>& modular_layers, std::size_t experts,
                                        ExpertInit mode) {
  cfg.validate();
  for (std::size_t l : modular_layers) {
    if (l >= cfg.num_layers) {
      throw Error("modular layer index " + std::to_string(l) + " >= num_layers " + std::to_string(cfg.num_layers));
    }
  }
  if (!modular_layers.empty() && experts < 2) throw Error("modular layers need at least two experts");
  EncoderParams p;
  p.config = cfg;
  p.input_norm = Norm<T>::init(cfg.feat_dim);
  std::mt19937_64 front(derive_seed(seed, "frontend"));
  p.frontend_kernel = xavier_uniform<T>({cfg.frontend_kernel, cfg.feat_dim, cfg.d_model},
                                        cfg.frontend_kernel * cfg.feat_dim, cfg.d_model, front);
  p.frontend_bias = Tensor<T>({cfg.d_model}, T{0}, true);
  const BlockDims dims = cfg.block_dims();
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::uint64_t layer_seed = derive_seed(seed, "layer-" + std::to_string(l));
    std::mt19937_64 rng(layer_seed);
    auto block = ConformerBlockParams<T>::init(dims, rng);
    if (!modular_layers.count(l)) {
      p.layers.emplace_back(std::move(block));
      continue;
    }
    ExpertLayer<T> layer;
    layer.layer_index = l;
    layer.experts.push_back(block);
    for (std::size_t e = 1; e < experts; ++e) {
      if (mode == ExpertInit::Clone) {
        layer.experts.push_back(block.clone());
      } else {
        std::mt19937_64 erng(derive_seed(layer_seed, "expert-" + std::to_string(e)));
        layer.experts.push_back(ConformerBlockParams<T>::init(dims, erng));
      }
    }
    p.layers.emplace_back(std::move(layer));
  }
  std::mt19937_64 head(derive_seed(seed, "ctc-head"));
  p.ctc_head = Linear<T>::init(cfg.d_model, cfg.vocab_size, head);
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::zeros(const EncoderConfig& cfg) {
  cfg.validate();
  EncoderParams p;
  p.config = cfg;
  p.input_norm = Norm<T>::init(cfg.feat_dim);
  p.frontend_kernel = Tensor<T>({cfg.frontend_kernel, cfg.feat_dim, cfg.d_model}, T{0}, true);
  p.frontend_bias = Tensor<T>({cfg.d_model}, T{0}, true);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) p.layers.emplace_back(ConformerBlockParams<T>::zeros(cfg.block_dims()));
  p.ctc_head = Linear<T>::zeros(cfg.d_model, cfg.vocab_size);
  return p;
}

template <typename T>
bool EncoderParams<T>::is_modular(std::size_t layer) const {
  return std::holds_alternative<ExpertLayer<T>>(layers.at(layer));
}

template <typename T>
std::set<std::size_t> EncoderParams<T>::modular_layers() const {
  std::set<std::size_t> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (is_modular(l)) out.insert(l);
  }
  return out;
}

template <typename T>
void EncoderParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  input_norm.collect(prefix + ".input_norm", out);
  out.emplace_back(prefix + ".frontend.weight", frontend_kernel);
  out.emplace_back(prefix + ".frontend.bias", frontend_bias);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string name = prefix + ".layers." + std::to_string(l);
    if (const auto* b = std::get_if<ConformerBlockParams<T>>(&layers[l])) {
      b->collect(name, out);
    } else {
      const auto& el = std::get<ExpertLayer<T>>(layers[l]);
      for (std::size_t e = 0; e < el.experts.size(); ++e) el.experts[e].collect(name + ".experts." + std::to_string(e), out);
    }
  }
  ctc_head.collect(prefix + ".ctc_head", out);
}

template <typename T>
EncoderParams<T> EncoderParams<T>::clone() const {
  EncoderParams p;
  p.config = config;
  p.input_norm = input_norm.clone();
  p.frontend_kernel = frontend_kernel.clone();
  p.frontend_bias = frontend_bias.clone();
  for (const auto& layer : layers) {
    if (const auto* b = std::get_if<ConformerBlockParams<T>>(&layer)) {
      p.layers.emplace_back(b->clone());
    } else {
      const auto& el = std::get<ExpertLayer<T>>(layer);
      ExpertLayer<T> copy;
      copy.layer_index = el.layer_index;
      for (const auto& e : el.experts) copy.experts.push_back(e.clone());
      p.layers.emplace_back(std::move(copy));
    }
  }
  p.ctc_head = ctc_head.clone();
  return p;
}

template <typename T>
Tensor<T> encoder_frontend(const Tensor<T>& feats, const EncoderParams<T>& p) {
  if (feats.rank() != 2 || feats.dim(1) != p.config.feat_dim) {
    throw ShapeError("encoder expects [T, " + std::to_string(p.config.feat_dim) + "] features, got " +
                     shape_string(feats.shape()));
  }
  Tensor<T> h = conv1d(p.input_norm(feats), p.frontend_kernel, static_cast<int>(p.config.subsampling), Padding::Same);
  h = swish(add(h, p.frontend_bias));
  return add(h, sinusoidal_positions<T>(h.dim(0), p.config.d_model));
}

template <typename T>
std::vector<Tensor<T>> encoder_forward_batch(std::span<const Tensor<T>> feats, const EncoderParams<T>& p,
                                             const RoutingContext<T>* ctx,
                                             std::span<const RoutingDecision> decisions,
                                             std::span<const Tensor<T>> gates,
                                             std::mt19937_64* dropout_rng) {
  const std::set<std::size_t> modular = p.modular_layers();
  if (ctx) {
    ctx->validate(p.config.num_layers);
    if (ctx->modular_layers != modular) {
      throw Error("routing context modular layers do not match the expert layers of the parameters");
    }
  } else if (!modular.empty()) {
    throw Error("modular encoder parameters need a routing context");
  }
  std::vector<Tensor<T>> h;
  h.reserve(feats.size());
  const bool drop = dropout_rng && p.config.dropout > 0.0;
  for (const auto& f : feats) h.push_back(encoder_frontend(f, p));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (drop) {
      for (auto& x : h) x = dropout(x, p.config.dropout, *dropout_rng);
    }
    if (const auto* block = std::get_if<ConformerBlockParams<T>>(&p.layers[l])) {
      for (auto& x : h) x = conformer_block(x, *block);
    } else {
      h = expert_layer_forward<T>(h, std::get<ExpertLayer<T>>(p.layers[l]), *ctx, decisions, gates);
    }
  }
  return h;
}

template <typename T>
Tensor<T> encoder_forward(const Tensor<T>& feats, const EncoderParams<T>& p, const RoutingContext<T>* ctx,
                          const RoutingDecision* decision) {
  const std::vector<Tensor<T>> batch{feats};
  std::vector<RoutingDecision> decisions;
  if (decision) decisions.push_back(*decision);
  return encoder_forward_batch<T>(batch, p, ctx, decisions).front();
}

template <typename T>
Tensor<T> ctc_head(const Tensor<T>& encoded, const EncoderParams<T>& p) {
  return p.ctc_head(encoded);
}

#define MODASR_INSTANTIATE(T)                                                                          \
  template struct EncoderParams<T>;                                                                    \
  template Tensor<T> encoder_frontend(const Tensor<T>&, const EncoderParams<T>&);                      \
  template std::vector<Tensor<T>> encoder_forward_batch(std::span<const Tensor<T>>, const EncoderParams<T>&, \
                                                        const RoutingContext<T>*,                      \
                                                        std::span<const RoutingDecision>,              \
                                                        std::span<const Tensor<T>>, std::mt19937_64*); \
  template Tensor<T> encoder_forward(const Tensor<T>&, const EncoderParams<T>&, const RoutingContext<T>*, \
                                     const RoutingDecision*);                                          \
  template Tensor<T> ctc_head(const Tensor<T>&, const EncoderParams<T>&);

MODASR_INSTANTIATE(float)
MODASR_INSTANTIATE(double)

#undef MODASR_INSTANTIATE

}  // namespace modasr
