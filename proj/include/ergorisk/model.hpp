#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ergorisk/checkpoint.hpp"
#include "ergorisk/nn.hpp"
#include "ergorisk/pose_io.hpp"

namespace ergorisk {

struct BackboneStage {
  std::size_t channels = 32;
  std::size_t blocks = 2;
  std::size_t stride = 1;  // applied by the first block of the stage
  bool operator==(const BackboneStage&) const = default;
};

struct ViskGatConfig {
  std::size_t image_size = 224;
  std::size_t n_img = 256;
  std::size_t d_tok = 128;
  std::size_t pose_points = kLandmarkCount;
  std::size_t pose_heads = 8;
  std::size_t fgam_heads = 8;
  std::size_t fgam_ffn_hidden = 512;
  std::size_t fgam_lt_blocks = 2;
  std::size_t mgcm_dim = 256;
  std::size_t mgcm_heads = 4;
  std::size_t mgcm_layers = 2;
  std::size_t mgcm_ffn_hidden = 1024;
  std::size_t fusion_dim = 512;
  std::size_t num_classes = 8;
  double dropout = 0.1;

  // Patchifying stem: conv(3 -> stem_channels, stem_kernel, stem_stride).
  std::size_t stem_channels = 32;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 7;
  std::size_t stem_padding = 0;
  std::vector<BackboneStage> stages = {{32, 2, 1}, {64, 2, 2}, {128, 2, 1}, {128, 2, 1}};

  // 224x224 input, 16x16x128 image tokens, d = 256.
  static ViskGatConfig paper();
  // 64x64 input, 8x8 map, reduced widths; CPU-trainable in minutes.
  static ViskGatConfig desk();
  // 16x16 input, d_tok 8, d 16; small enough for finite differences.
  static ViskGatConfig tiny();

  // Side length of the backbone's output map.
  std::size_t backbone_grid() const;
  // Throws ConfigError naming the violated constraint.
  void validate() const;
  bool operator==(const ViskGatConfig&) const = default;
};

std::string model_config_to_json(const ViskGatConfig& cfg);
// Keys absent from the document keep the full-size defaults (the "paper" preset).
// A "preset" key ("paper", "desk", "tiny") selects the base instead.
ViskGatConfig parse_model_config(const std::string& json_text);
ViskGatConfig load_model_config(const std::filesystem::path& path);

template <typename T>
using Tensor = ad::Tensor<T>;

// Pre-activation residual block:
//   y = shortcut(x) + conv2(relu(LN2(conv1(relu(LN1(x))))))
// shortcut is a strided 1x1 projection when stride or width change and the
// identity otherwise.
template <typename T>
struct ResidualBlock {
  nn::LayerNorm<T> norm1;
  nn::Conv2d<T> conv1;
  nn::LayerNorm<T> norm2;
  nn::Conv2d<T> conv2;
  nn::Conv2d<T> shortcut;  // undefined weight when identity

  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);
  bool has_projection() const { return shortcut.weight.defined(); }
  Tensor<T> operator()(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

template <typename T>
struct ImageBackbone {
  nn::Conv2d<T> stem;
  std::vector<ResidualBlock<T>> blocks;
  nn::LayerNorm<T> out_norm;

  ImageBackbone() = default;
  ImageBackbone(const ViskGatConfig& cfg, Rng& rng);
  // [3,S,S] -> [n_img, d_tok], cells in row-major order.
  Tensor<T> operator()(const Tensor<T>& image) const;
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

template <typename T>
struct Fgam {
  nn::MultiHeadAttention<T> attn;
  nn::LayerNorm<T> attn_norm;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::FeedForward<T> ffn;
  nn::LayerNorm<T> ffn_norm;

  Fgam() = default;
  Fgam(const ViskGatConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

template <typename T>
struct Mgcm {
  nn::Linear<T> img_proj;
  nn::LayerNorm<T> img_norm;
  nn::Linear<T> pose_down;
  nn::Linear<T> pose_up;
  nn::MultiHeadAttention<T> cross_attn;
  std::vector<nn::TransformerBlock<T>> layers;
  nn::Linear<T> fusion;
  nn::LayerNorm<T> fusion_norm;

  Mgcm() = default;
  Mgcm(const ViskGatConfig& cfg, Rng& rng);
  void visit(const std::string& prefix, const nn::ParamVisitor<T>& fn);
};

// Intermediates of one forward pass, named after the quantities they hold.
template <typename T>
struct ForwardTrace {
  Tensor<T> f_img;       // [n_img, d_tok]
  Tensor<T> e_pose;      // [33, d_tok]
  Tensor<T> f_pose;      // [33, d_tok]
  Tensor<T> f1, f2, f3;  // FGAM stages, [n_img, d_tok]
  Tensor<T> f_img_hat;   // FGAM output
  Tensor<T> f_img_proj;  // [n_img, d]
  Tensor<T> f_pose_proj; // [33, d]
  Tensor<T> f_attn;      // [n_img, d]
  Tensor<T> f_fused;     // [1, 2d]
  Tensor<T> f_corr;      // [fusion_dim]
  Tensor<T> logits;      // [num_classes]
  Tensor<T> probs;       // [num_classes]
  std::vector<ad::AttentionProbe> probes;
};

template <typename T>
class ViskGat {
 public:
  ViskGat(const ViskGatConfig& cfg, std::uint64_t seed);

  const ViskGatConfig& config() const { return cfg_; }

  // image [3,S,S] with values in [0,1], pose [33,2]. Returns logits [1,C].
  Tensor<T> forward(const Tensor<T>& image, const Tensor<T>& pose, const nn::ForwardContext& ctx,
                    ForwardTrace<T>* trace = nullptr) const;

  Tensor<T> image_features(const Tensor<T>& image) const { return backbone(image); }
  Tensor<T> embed_pose(const Tensor<T>& pose) const;
  Tensor<T> pose_transformer(const Tensor<T>& e_pose, const nn::ForwardContext& ctx) const;
  Tensor<T> fgam(const Tensor<T>& f_img, const nn::ForwardContext& ctx, ForwardTrace<T>* trace = nullptr) const;
  // Returns F_corr [1, fusion_dim].
  Tensor<T> mgcm(const Tensor<T>& f_img_hat, const Tensor<T>& f_pose, const nn::ForwardContext& ctx,
                 ForwardTrace<T>* trace = nullptr) const;
  Tensor<T> classify(const Tensor<T>& f_corr) const { return classifier(f_corr); }

  // Visits every learnable tensor in a fixed order with dotted names.
  void visit(const nn::ParamVisitor<T>& fn);
  std::vector<Tensor<T>> parameters();
  std::vector<std::string> parameter_names();
  std::size_t parameter_count();

  // Zeroes the cross-attention value projection (weight and bias), which
  // cuts the pose path into F_attn.
  void zero_cross_attention_values();

  ImageBackbone<T> backbone;
  nn::Linear<T> pose_embed;
  nn::TransformerBlock<T> pose_block;
  Fgam<T> fgam_module;
  Mgcm<T> mgcm_module;
  nn::Linear<T> classifier;

 private:
  ViskGatConfig cfg_;
};

using Model = ViskGat<float>;

std::vector<NamedTensor> export_parameters(Model& model);
// Throws SchemaError when names or shapes differ from the model's.
void import_parameters(Model& model, const std::vector<NamedTensor>& tensors);

// Writes <path> (weights) and <path>.json (architecture).
void save_model(Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// [33,2] of normalized coordinates; absent landmarks enter as (0,0).
template <typename T>
Tensor<T> pose_tensor(const Skeleton& s, std::size_t points = kLandmarkCount);

}  // namespace ergorisk
