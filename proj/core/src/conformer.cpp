// Copyright (c) modasr authors.
// SPDX-License-Identifier: Apache-2.0

#include "modasr/conformer.hpp"

#include <cmath>

namespace modasr {

void BlockDims::validate() const {
  if (d_model == 0) throw Error("d_model: must be positive");
  if (heads == 0) throw Error("heads: must be positive");
  if (ffn_dim == 0) throw Error("ffn_dim: must be positive");
  if (kernel_size == 0) throw Error("kernel_size: must be positive");
  if (d_model % heads != 0) {
    throw Error("heads: d_model=" + std::to_string(d_model) + " is not divisible by heads=" +
                std::to_string(heads));
  }
  if (kernel_size % 2 == 0) {
    throw Error("kernel_size: depthwise kernel_size=" + std::to_string(kernel_size) + " must be odd");
  }
}

namespace {

template <typename T>
FeedForwardParams<T> init_ffn(const BlockDims& d, std::mt19937_64& rng) {
  return {Norm<T>::init(d.d_model), Linear<T>::init(d.d_model, d.ffn_dim, rng),
          Linear<T>::init(d.ffn_dim, d.d_model, rng)};
}

template <typename T>
FeedForwardParams<T> zero_ffn(const BlockDims& d) {
  return {Norm<T>::init(d.d_model), Linear<T>::zeros(d.d_model, d.ffn_dim),
          Linear<T>::zeros(d.ffn_dim, d.d_model)};
}

template <typename T>
void collect_ffn(const FeedForwardParams<T>& f, const std::string& prefix, ParamList<T>& out) {
  f.norm.collect(prefix + ".norm", out);
  f.in.collect(prefix + ".in", out);
  f.out.collect(prefix + ".out", out);
}

template <typename T>
FeedForwardParams<T> clone_ffn(const FeedForwardParams<T>& f) {
  return {f.norm.clone(), f.in.clone(), f.out.clone()};
}

}  // namespace

template <typename T>
ConformerBlockParams<T> ConformerBlockParams<T>::init(const BlockDims& dims,
                                                      std::mt19937_64& rng) {
  dims.validate();
  const std::size_t d = dims.d_model;
  ConformerBlockParams p;
  p.dims = dims;
  p.ffn1 = init_ffn<T>(dims, rng);
  p.attention_norm = Norm<T>::init(d);
  p.attention = {Linear<T>::init(d, d, rng), Linear<T>::init(d, d, rng),
                 Linear<T>::init(d, d, rng), Linear<T>::init(d, d, rng)};
  p.conv_norm = Norm<T>::init(d);
  p.conv.pointwise_in = Linear<T>::init(d, 2 * d, rng);
  p.conv.depthwise =
      xavier_uniform<T>({dims.kernel_size, 1, d}, dims.kernel_size, dims.kernel_size, rng);
  p.conv.depthwise_bias = Tensor<T>({d}, T{0}, true);
  p.conv.pointwise_out = Linear<T>::init(d, d, rng);
  p.ffn2 = init_ffn<T>(dims, rng);
  p.final_norm = Norm<T>::init(d);
  return p;
}

template <typename T>
ConformerBlockParams<T> ConformerBlockParams<T>::zeros(const BlockDims& dims) {
  dims.validate();
  const std::size_t d = dims.d_model;
  ConformerBlockParams p;
  p.dims = dims;
  p.ffn1 = zero_ffn<T>(dims);
  p.attention_norm = Norm<T>::init(d);
  p.attention = {Linear<T>::zeros(d, d), Linear<T>::zeros(d, d), Linear<T>::zeros(d, d),
                 Linear<T>::zeros(d, d)};
  p.conv_norm = Norm<T>::init(d);
  p.conv.pointwise_in = Linear<T>::zeros(d, 2 * d);
  p.conv.depthwise = Tensor<T>({dims.kernel_size, 1, d}, T{0}, true);
  p.conv.depthwise_bias = Tensor<T>({d}, T{0}, true);
  p.conv.pointwise_out = Linear<T>::zeros(d, d);
  p.ffn2 = zero_ffn<T>(dims);
  p.final_norm = Norm<T>::init(d);
  return p;
}

template <typename T>
void ConformerBlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  collect_ffn(ffn1, prefix + ".ffn1", out);
  attention_norm.collect(prefix + ".attention_norm", out);
  attention.query.collect(prefix + ".attention.query", out);
  attention.key.collect(prefix + ".attention.key", out);
  attention.value.collect(prefix + ".attention.value", out);
  attention.output.collect(prefix + ".attention.output", out);
  conv_norm.collect(prefix + ".conv_norm", out);
  conv.pointwise_in.collect(prefix + ".conv.pointwise_in", out);
  out.emplace_back(prefix + ".conv.depthwise.weight", conv.depthwise);
  out.emplace_back(prefix + ".conv.depthwise.bias", conv.depthwise_bias);
  conv.pointwise_out.collect(prefix + ".conv.pointwise_out", out);
  collect_ffn(ffn2, prefix + ".ffn2", out);
  final_norm.collect(prefix + ".final_norm", out);
}

template <typename T>
ConformerBlockParams<T> ConformerBlockParams<T>::clone() const {
  ConformerBlockParams p;
  p.dims = dims;
  p.ffn1 = clone_ffn(ffn1);
  p.attention_norm = attention_norm.clone();
  p.attention = {attention.query.clone(), attention.key.clone(), attention.value.clone(),
                 attention.output.clone()};
  p.conv_norm = conv_norm.clone();
  p.conv = {conv.pointwise_in.clone(), conv.depthwise.clone(), conv.depthwise_bias.clone(),
            conv.pointwise_out.clone()};
  p.ffn2 = clone_ffn(ffn2);
  p.final_norm = final_norm.clone();
  return p;
}

template <typename T>
bool ConformerBlockParams<T>::same_shapes(const ConformerBlockParams& other) const {
  ParamList<T> a, b;
  collect("", a);
  other.collect("", b);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second.shape() != b[i].second.shape()) return false;
  }
  return true;
}

template <typename T>
Tensor<T> feed_forward(const Tensor<T>& x, const FeedForwardParams<T>& p) {
  return p.out(swish(p.in(p.norm(x))));
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p, std::size_t heads,
               std::vector<Tensor<T>>* weights) {
  if (x.rank() != 2) throw ShapeError("mhsa expects [T, d], got " + shape_string(x.shape()));
  const std::size_t d = x.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("mhsa: d=" + std::to_string(d) + " not divisible by heads=" +
                     std::to_string(heads));
  }
  if (p.query.in_features() != d) {
    throw ShapeError("mhsa: input width " + std::to_string(d) + " does not match W_q " +
                     shape_string(p.query.weight.shape()));
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  const Tensor<T> q = p.query(x);
  const Tensor<T> k = p.key(x);
  const Tensor<T> v = p.value(x);
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = slice_cols(q, h * dh, dh);
    const Tensor<T> kh = slice_cols(k, h * dh, dh);
    const Tensor<T> vh = slice_cols(v, h * dh, dh);
    Tensor<T> attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), -1);
    if (weights) weights->push_back(attn);
    outs.push_back(matmul(attn, vh));
  }
  return p.output(heads == 1 ? outs.front() : concat_cols(outs));
}

template <typename T>
Tensor<T> conv_module(const Tensor<T>& x, const ConvModuleParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.pointwise_in.in_features()) {
    throw ShapeError("conv_module: input " + shape_string(x.shape()) +
                     " does not match pointwise_in " + shape_string(p.pointwise_in.weight.shape()));
  }
  const std::size_t d = x.dim(1);
  const Tensor<T> h = p.pointwise_in(x);
  const Tensor<T> glu = mul(slice_cols(h, 0, d), sigmoid(slice_cols(h, d, d)));
  const Tensor<T> dw =
      add(conv1d(glu, p.depthwise, 1, Padding::Same, static_cast<int>(d)), p.depthwise_bias);
  return p.pointwise_out(swish(dw));
}

template <typename T>
Tensor<T> conformer_block(const Tensor<T>& x, const ConformerBlockParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.dims.d_model) {
    throw ShapeError("conformer_block: input " + shape_string(x.shape()) + " but d_model=" +
                     std::to_string(p.dims.d_model));
  }
  const T half{0.5};
  const Tensor<T> x1 = add(x, scale(feed_forward(x, p.ffn1), half));
  const Tensor<T> x2 = add(x1, mhsa(p.attention_norm(x1), p.attention, p.dims.heads));
  const Tensor<T> x3 = add(x2, conv_module(p.conv_norm(x2), p.conv));
  return p.final_norm(add(x3, scale(feed_forward(x3, p.ffn2), half)));
}

template <typename T>
Tensor<T> sinusoidal_positions(std::size_t length, std::size_t d) {
  std::vector<T> pe(length * d);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe[t * d + i] = static_cast<T>(std::sin(static_cast<double>(t) * freq));
      if (i + 1 < d) pe[t * d + i + 1] = static_cast<T>(std::cos(static_cast<double>(t) * freq));
    }
  }
  return Tensor<T>({length, d}, std::move(pe));
}

#define MODASR_INSTANTIATE(T)                                                              \
  template struct ConformerBlockParams<T>;                                                 \
  template Tensor<T> feed_forward(const Tensor<T>&, const FeedForwardParams<T>&);          \
  template Tensor<T> mhsa(const Tensor<T>&, const AttentionParams<T>&, std::size_t,        \
                          std::vector<Tensor<T>>*);                                        \
  template Tensor<T> conv_module(const Tensor<T>&, const ConvModuleParams<T>&);            \
  template Tensor<T> conformer_block(const Tensor<T>&, const ConformerBlockParams<T>&);    \
  template Tensor<T> sinusoidal_positions(std::size_t, std::size_t);

MODASR_INSTANTIATE(float)
MODASR_INSTANTIATE(double)

#undef MODASR_INSTANTIATE

}  // namespace modasr
