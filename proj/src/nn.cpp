#include "ergorisk/nn.hpp"

#include <cmath>

#include "ergorisk/errors.hpp"

namespace ergorisk::nn {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = Tensor<T>::uniform({in, out}, -bound, bound, rng);
  bias = Tensor<T>::zeros({out});
  weight.set_requires_grad();
  bias.set_requires_grad();
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return ad::add_bias(ad::matmul(x, weight), bias);
}

template <typename T>
void Linear<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t d) : gamma(Tensor<T>::ones({d})), beta(Tensor<T>::zeros({d})) {
  gamma.set_requires_grad();
  beta.set_requires_grad();
}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
  return ad::layer_norm(x, gamma, beta);
}

template <typename T>
void LayerNorm<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t d, std::size_t h, Rng& rng) : heads(h) {
  if (h == 0 || d % h != 0) {
    throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(h) +
                      " heads");
  }
  q_proj = Linear<T>(d, d, rng);
  k_proj = Linear<T>(d, d, rng);
  v_proj = Linear<T>(d, d, rng);
  out_proj = Linear<T>(d, d, rng);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& query, const Tensor<T>& context,
                                            const ForwardContext& ctx) const {
  ad::AttentionProbe probe;
  const Tensor<T> mixed =
      ad::attention(q_proj(query), k_proj(context), v_proj(context), heads, ctx.probes ? &probe : nullptr);
  if (ctx.probes) ctx.probes->push_back(std::move(probe));
  return out_proj(mixed);
}

template <typename T>
void MultiHeadAttention<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  q_proj.visit(prefix + ".q", fn);
  k_proj.visit(prefix + ".k", fn);
  v_proj.visit(prefix + ".v", fn);
  out_proj.visit(prefix + ".out", fn);
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  switch (act) {
    case Activation::gelu: return ad::gelu(x);
    case Activation::relu: return ad::relu(x);
    case Activation::identity: return x;
  }
  return x;
}

template <typename T>
FeedForward<T>::FeedForward(std::size_t d, std::size_t hidden, Rng& rng, Activation act)
    : up(d, hidden, rng), down(hidden, d, rng), activation(act) {}

template <typename T>
Tensor<T> FeedForward<T>::operator()(const Tensor<T>& x) const {
  return down(activate(up(x), activation));
}

template <typename T>
void FeedForward<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  up.visit(prefix + ".up", fn);
  down.visit(prefix + ".down", fn);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t d, std::size_t heads, std::size_t hidden, double p, Rng& rng)
    : attn(d, heads, rng), ffn(d, hidden, rng), norm1(d), norm2(d), dropout(p) {}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
  const Tensor<T> a = ad::dropout(attn(x, x, ctx), dropout, ctx.rng, ctx.train);
  const Tensor<T> h = norm1(ad::add(x, a));
  const Tensor<T> f = ad::dropout(ffn(h), dropout, ctx.rng, ctx.train);
  return norm2(ad::add(h, f));
}

template <typename T>
void TransformerBlock<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  attn.visit(prefix + ".attn", fn);
  ffn.visit(prefix + ".ffn", fn);
  norm1.visit(prefix + ".norm1", fn);
  norm2.visit(prefix + ".norm2", fn);
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t s, std::size_t p, bool with_bias,
                  Rng& rng)
    : stride(s), padding(p) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = Tensor<T>::uniform({out, in, kernel, kernel}, -bound, bound, rng);
  weight.set_requires_grad();
  if (with_bias) {
    bias = Tensor<T>::zeros({out});
    bias.set_requires_grad();
  }
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ad::conv2d(x, weight, bias, stride, padding);
}

template <typename T>
void Conv2d<T>::visit(const std::string& prefix, const ParamVisitor<T>& fn) {
  fn(prefix + ".weight", weight);
  if (bias.defined()) fn(prefix + ".bias", bias);
}

template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const LayerNorm<T>& norm) {
  if (!x.defined() || x.rank() != 3) throw ShapeError("channel_layer_norm expects a [C,H,W] map");
  const std::size_t c = x.dim(0);
  const std::size_t h = x.dim(1);
  const std::size_t w = x.dim(2);
  const Tensor<T> rows = ad::transpose(ad::reshape(x, {c, h * w}));
  return ad::reshape(ad::transpose(norm(rows)), {c, h, w});
}

#define ERGORISK_INSTANTIATE(T)                                                         \
  template struct Linear<T>;                                                            \
  template struct LayerNorm<T>;                                                         \
  template struct MultiHeadAttention<T>;                                                \
  template struct FeedForward<T>;                                                       \
  template struct TransformerBlock<T>;                                                  \
  template struct Conv2d<T>;                                                            \
  template Tensor<T> channel_layer_norm<T>(const Tensor<T>&, const LayerNorm<T>&);      \
  template Tensor<T> activate<T>(const Tensor<T>&, Activation);

ERGORISK_INSTANTIATE(float)
ERGORISK_INSTANTIATE(double)

#undef ERGORISK_INSTANTIATE

}  // namespace ergorisk::nn
