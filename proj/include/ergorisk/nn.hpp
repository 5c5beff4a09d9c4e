#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ergorisk/rng.hpp"
#include "ergorisk/tensor.hpp"

namespace ergorisk::nn {

template <typename T>
using Tensor = ad::Tensor<T>;

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;

// Per-call switches shared by every layer of one forward pass.
struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // dropout masks; required when train is set
  // When set, every attention call appends its probability matrices.
  std::vector<ad::AttentionProbe>* probes = nullptr;
};

// y = x W + b with W [in,out]. W ~ U(-1/sqrt(in), 1/sqrt(in)), b = 0.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

// Multi-head attention with separate q/k/v/output projections. Self-attention
// passes the same tensor as query and context.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q_proj;
  Linear<T> k_proj;
  Linear<T> v_proj;
  Linear<T> out_proj;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  // Throws ConfigError when d is not divisible by heads.
  MultiHeadAttention(std::size_t d, std::size_t heads, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& context, const ForwardContext& ctx) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

enum class Activation { gelu, relu, identity };

// down(act(up(x))): [n,d] -> [n,hidden] -> [n,d].
template <typename T>
struct FeedForward {
  Linear<T> up;
  Linear<T> down;
  Activation activation = Activation::gelu;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng, Activation act = Activation::gelu);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

// Post-norm block:
//   h = LN1(x + dropout(MHA(x)))
//   y = LN2(h + dropout(FFN(h)))
template <typename T>
struct TransformerBlock {
  MultiHeadAttention<T> attn;
  FeedForward<T> ffn;
  LayerNorm<T> norm1;
  LayerNorm<T> norm2;
  double dropout = 0.0;

  TransformerBlock() = default;
  TransformerBlock(std::size_t d, std::size_t heads, std::size_t hidden, double dropout, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

// kernel [out,in,k,k] ~ U(+-1/sqrt(in*k*k)); optional bias [out] = 0.
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when constructed without bias
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, bool with_bias,
         Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& fn);
};

// LayerNorm over the channel axis of a [C,H,W] map.
template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const LayerNorm<T>& norm);

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act);

}  // namespace ergorisk::nn
