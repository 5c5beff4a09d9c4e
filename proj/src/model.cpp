#include "ergorisk/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ergorisk/errors.hpp"

namespace ergorisk {
namespace {

using json = nlohmann::ordered_json;

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

void require_divisible(std::size_t width, std::size_t heads, const char* what) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError(std::string(what) + ": width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
}

}  // namespace

ViskGatConfig ViskGatConfig::paper() { return ViskGatConfig{}; }

ViskGatConfig ViskGatConfig::desk() {
  ViskGatConfig c;
  c.image_size = 64;
  c.n_img = 64;
  c.d_tok = 32;
  c.pose_heads = 4;
  c.fgam_heads = 4;
  c.fgam_ffn_hidden = 128;
  c.mgcm_dim = 64;
  c.mgcm_heads = 4;
  c.mgcm_ffn_hidden = 256;
  c.fusion_dim = 128;
  c.stem_channels = 16;
  c.stem_kernel = 4;
  c.stem_stride = 4;
  c.stem_padding = 0;
  c.stages = {{32, 1, 2}};
  return c;
}

ViskGatConfig ViskGatConfig::tiny() {
  ViskGatConfig c;
  c.image_size = 16;
  c.n_img = 16;
  c.d_tok = 8;
  c.pose_heads = 2;
  c.fgam_heads = 2;
  c.fgam_ffn_hidden = 16;
  c.mgcm_dim = 16;
  c.mgcm_heads = 2;
  c.mgcm_layers = 1;
  c.mgcm_ffn_hidden = 32;
  c.fusion_dim = 16;
  c.stem_channels = 4;
  c.stem_kernel = 2;
  c.stem_stride = 2;
  c.stem_padding = 0;
  c.stages = {{8, 1, 2}};
  return c;
}

std::size_t ViskGatConfig::backbone_grid() const {
  if (stem_stride == 0) return 0;
  std::size_t side = conv_out(image_size, stem_kernel, stem_stride, stem_padding);
  for (const auto& st : stages) {
    if (st.stride == 0 || st.blocks == 0) return 0;
    side = conv_out(side, 3, st.stride, 1);
  }
  return side;
}

void ViskGatConfig::validate() const {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(image_size, "image_size");
  positive(n_img, "n_img");
  positive(d_tok, "d_tok");
  positive(pose_points, "pose_points");
  positive(fgam_ffn_hidden, "fgam_ffn_hidden");
  positive(mgcm_dim, "mgcm_dim");
  positive(mgcm_ffn_hidden, "mgcm_ffn_hidden");
  positive(fusion_dim, "fusion_dim");
  positive(num_classes, "num_classes");
  positive(stem_channels, "stem_channels");
  positive(stem_kernel, "stem_kernel");
  positive(stem_stride, "stem_stride");
  if (stages.empty()) throw ConfigError("model config: backbone needs at least one stage");
  for (const auto& st : stages) {
    if (st.channels == 0 || st.blocks == 0 || st.stride == 0) {
      throw ConfigError("model config: backbone stages need positive channels, blocks and stride");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must lie in [0,1)");
  if (pose_points != kLandmarkCount) throw ConfigError("model config: pose_points must be 33");
  require_divisible(d_tok, fgam_heads, "fgam");
  require_divisible(d_tok, pose_heads, "pose transformer");
  require_divisible(mgcm_dim, mgcm_heads, "mgcm cross-attention");
  require_divisible(2 * mgcm_dim, mgcm_heads, "mgcm transformer");
  if (mgcm_dim % 2 != 0) throw ConfigError("model config: mgcm_dim must be even");
  if (stages.back().channels != d_tok) {
    throw ConfigError("model config: last backbone stage has " + std::to_string(stages.back().channels) +
                      " channels but d_tok is " + std::to_string(d_tok));
  }
  const std::size_t grid = backbone_grid();
  if (grid * grid != n_img) {
    throw ConfigError("model config: backbone yields a " + std::to_string(grid) + "x" + std::to_string(grid) +
                      " map, which is not n_img = " + std::to_string(n_img) + " tokens");
  }
}

std::string model_config_to_json(const ViskGatConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["n_img"] = c.n_img;
  j["d_tok"] = c.d_tok;
  j["pose_points"] = c.pose_points;
  j["pose_heads"] = c.pose_heads;
  j["fgam_heads"] = c.fgam_heads;
  j["fgam_ffn_hidden"] = c.fgam_ffn_hidden;
  j["fgam_lt_blocks"] = c.fgam_lt_blocks;
  j["mgcm_dim"] = c.mgcm_dim;
  j["mgcm_heads"] = c.mgcm_heads;
  j["mgcm_layers"] = c.mgcm_layers;
  j["mgcm_ffn_hidden"] = c.mgcm_ffn_hidden;
  j["fusion_dim"] = c.fusion_dim;
  j["num_classes"] = c.num_classes;
  j["dropout"] = c.dropout;
  j["stem"] = {{"channels", c.stem_channels},
               {"kernel", c.stem_kernel},
               {"stride", c.stem_stride},
               {"padding", c.stem_padding}};
  json stages = json::array();
  for (const auto& st : c.stages) {
    stages.push_back({{"channels", st.channels}, {"blocks", st.blocks}, {"stride", st.stride}});
  }
  j["stages"] = std::move(stages);
  return j.dump(2) + "\n";
}

ViskGatConfig parse_model_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");

  ViskGatConfig c;
  try {
    if (j.contains("preset")) {
      const auto preset = j.at("preset").get<std::string>();
      if (preset == "paper") {
        c = ViskGatConfig::paper();
      } else if (preset == "desk") {
        c = ViskGatConfig::desk();
      } else if (preset == "tiny") {
        c = ViskGatConfig::tiny();
      } else {
        throw ConfigError("unknown model preset '" + preset + "'");
      }
    }
    const auto take = [&](const char* key, std::size_t& field) {
      if (j.contains(key)) field = j.at(key).get<std::size_t>();
    };
    take("image_size", c.image_size);
    take("n_img", c.n_img);
    take("d_tok", c.d_tok);
    take("pose_points", c.pose_points);
    take("pose_heads", c.pose_heads);
    take("fgam_heads", c.fgam_heads);
    take("fgam_ffn_hidden", c.fgam_ffn_hidden);
    take("fgam_lt_blocks", c.fgam_lt_blocks);
    take("mgcm_dim", c.mgcm_dim);
    take("mgcm_heads", c.mgcm_heads);
    take("mgcm_layers", c.mgcm_layers);
    take("mgcm_ffn_hidden", c.mgcm_ffn_hidden);
    take("fusion_dim", c.fusion_dim);
    take("num_classes", c.num_classes);
    if (j.contains("dropout")) c.dropout = j.at("dropout").get<double>();
    if (j.contains("stem")) {
      const auto& s = j.at("stem");
      c.stem_channels = s.at("channels").get<std::size_t>();
      c.stem_kernel = s.at("kernel").get<std::size_t>();
      c.stem_stride = s.at("stride").get<std::size_t>();
      c.stem_padding = s.value("padding", std::size_t{0});
    }
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& st : j.at("stages")) {
        c.stages.push_back(
            {st.at("channels").get<std::size_t>(), st.at("blocks").get<std::size_t>(), st.at("stride").get<std::size_t>()});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

ViskGatConfig load_model_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model_config(buf.str());
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
    : norm1(in), conv1(in, out, 3, stride, 1, true, rng), norm2(out), conv2(out, out, 3, 1, 1, true, rng) {
  if (stride != 1 || in != out) shortcut = nn::Conv2d<T>(in, out, 1, stride, 0, false, rng);
}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> h = conv1(ad::relu(nn::channel_layer_norm(x, norm1)));
  const Tensor<T> r = conv2(ad::relu(nn::channel_layer_norm(h, norm2)));
  return ad::add(has_projection() ? shortcut(x) : x, r);
}

template <typename T>
void ResidualBlock<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  norm1.visit(prefix + ".norm1", fn);
  conv1.visit(prefix + ".conv1", fn);
  norm2.visit(prefix + ".norm2", fn);
  conv2.visit(prefix + ".conv2", fn);
  if (has_projection()) shortcut.visit(prefix + ".shortcut", fn);
}

template <typename T>
ImageBackbone<T>::ImageBackbone(const ViskGatConfig& cfg, Rng& rng)
    : stem(3, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, cfg.stem_padding, true, rng), out_norm(cfg.d_tok) {
  std::size_t channels = cfg.stem_channels;
  for (const auto& st : cfg.stages) {
    for (std::size_t b = 0; b < st.blocks; ++b) {
      blocks.emplace_back(channels, st.channels, b == 0 ? st.stride : 1, rng);
      channels = st.channels;
    }
  }
}

template <typename T>
Tensor<T> ImageBackbone<T>::operator()(const Tensor<T>& image) const {
  Tensor<T> x = stem(image);
  for (const auto& block : blocks) x = block(x);
  const std::size_t c = x.dim(0);
  const std::size_t cells = x.dim(1) * x.dim(2);
  return out_norm(ad::transpose(ad::reshape(x, {c, cells})));
}

template <typename T>
void ImageBackbone<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  stem.visit(prefix + ".stem", fn);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
  out_norm.visit(prefix + ".out_norm", fn);
}

template <typename T>
Fgam<T>::Fgam(const ViskGatConfig& cfg, Rng& rng)
    : attn(cfg.d_tok, cfg.fgam_heads, rng),
      attn_norm(cfg.d_tok),
      ffn(cfg.d_tok, cfg.fgam_ffn_hidden, rng),
      ffn_norm(cfg.d_tok) {
  for (std::size_t i = 0; i < cfg.fgam_lt_blocks; ++i) {
    blocks.emplace_back(cfg.d_tok, cfg.fgam_heads, cfg.fgam_ffn_hidden, cfg.dropout, rng);
  }
}

template <typename T>
void Fgam<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  attn.visit(prefix + ".attn", fn);
  attn_norm.visit(prefix + ".attn_norm", fn);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(prefix + ".block" + std::to_string(i), fn);
  ffn.visit(prefix + ".ffn", fn);
  ffn_norm.visit(prefix + ".ffn_norm", fn);
}

template <typename T>
Mgcm<T>::Mgcm(const ViskGatConfig& cfg, Rng& rng)
    : img_proj(cfg.d_tok, cfg.mgcm_dim, rng),
      img_norm(cfg.mgcm_dim),
      pose_down(cfg.d_tok, cfg.mgcm_dim / 2, rng),
      pose_up(cfg.mgcm_dim / 2, cfg.mgcm_dim, rng),
      cross_attn(cfg.mgcm_dim, cfg.mgcm_heads, rng),
      fusion(2 * cfg.mgcm_dim, cfg.fusion_dim, rng),
      fusion_norm(cfg.fusion_dim) {
  for (std::size_t i = 0; i < cfg.mgcm_layers; ++i) {
    layers.emplace_back(2 * cfg.mgcm_dim, cfg.mgcm_heads, cfg.mgcm_ffn_hidden, cfg.dropout, rng);
  }
}

template <typename T>
void Mgcm<T>::visit(const std::string& prefix, const nn::ParamVisitor<T>& fn) {
  img_proj.visit(prefix + ".img_proj", fn);
  img_norm.visit(prefix + ".img_norm", fn);
  pose_down.visit(prefix + ".pose_down", fn);
  pose_up.visit(prefix + ".pose_up", fn);
  cross_attn.visit(prefix + ".cross_attn", fn);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  fusion.visit(prefix + ".fusion", fn);
  fusion_norm.visit(prefix + ".fusion_norm", fn);
}

template <typename T>
ViskGat<T>::ViskGat(const ViskGatConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng root(seed);
  Rng r_backbone = root.split(1);
  Rng r_pose = root.split(2);
  Rng r_fgam = root.split(3);
  Rng r_mgcm = root.split(4);
  Rng r_head = root.split(5);
  backbone = ImageBackbone<T>(cfg_, r_backbone);
  pose_embed = nn::Linear<T>(2, cfg_.d_tok, r_pose);
  pose_block = nn::TransformerBlock<T>(cfg_.d_tok, cfg_.pose_heads, cfg_.fgam_ffn_hidden, cfg_.dropout, r_pose);
  fgam_module = Fgam<T>(cfg_, r_fgam);
  mgcm_module = Mgcm<T>(cfg_, r_mgcm);
  classifier = nn::Linear<T>(cfg_.fusion_dim, cfg_.num_classes, r_head);
}

template <typename T>
Tensor<T> ViskGat<T>::embed_pose(const Tensor<T>& pose) const {
  if (!pose.defined() || pose.rank() != 2 || pose.dim(0) != cfg_.pose_points || pose.dim(1) != 2) {
    throw ShapeError("pose input must be [" + std::to_string(cfg_.pose_points) + ",2], got " +
                     (pose.defined() ? ad::shape_str(pose.shape()) : std::string("undefined")));
  }
  return pose_embed(pose);
}

template <typename T>
Tensor<T> ViskGat<T>::pose_transformer(const Tensor<T>& e_pose, const nn::ForwardContext& ctx) const {
  return pose_block(e_pose, ctx);
}

template <typename T>
Tensor<T> ViskGat<T>::fgam(const Tensor<T>& f_img, const nn::ForwardContext& ctx, ForwardTrace<T>* trace) const {
  const auto& m = fgam_module;
  const Tensor<T> f1 = m.attn_norm(ad::add(f_img, m.attn(f_img, f_img, ctx)));
  Tensor<T> x = f1;
  std::vector<Tensor<T>> stages;
  for (const auto& block : m.blocks) {
    x = block(x, ctx);
    stages.push_back(x);
  }
  const Tensor<T> out = m.ffn_norm(ad::add(x, m.ffn(x)));
  if (trace) {
    trace->f1 = f1;
    if (!stages.empty()) trace->f2 = stages.front();
    if (stages.size() > 1) trace->f3 = stages[1];
    trace->f_img_hat = out;
  }
  return out;
}

template <typename T>
Tensor<T> ViskGat<T>::mgcm(const Tensor<T>& f_img_hat, const Tensor<T>& f_pose, const nn::ForwardContext& ctx,
                           ForwardTrace<T>* trace) const {
  const auto& m = mgcm_module;
  const Tensor<T> img = ad::gelu(m.img_norm(m.img_proj(f_img_hat)));
  const Tensor<T> pose = m.pose_up(ad::gelu(m.pose_down(f_pose)));
  const Tensor<T> attn = m.cross_attn(img, pose, ctx);
  Tensor<T> fused = ad::mean_rows(ad::concat_cols(img, attn));
  const Tensor<T> pooled = fused;
  for (const auto& layer : m.layers) fused = layer(fused, ctx);
  const Tensor<T> corr = ad::gelu(m.fusion_norm(m.fusion(fused)));
  if (trace) {
    trace->f_img_proj = img;
    trace->f_pose_proj = pose;
    trace->f_attn = attn;
    trace->f_fused = pooled;
    trace->f_corr = ad::reshape(corr, {cfg_.fusion_dim});
  }
  return corr;
}

template <typename T>
Tensor<T> ViskGat<T>::forward(const Tensor<T>& image, const Tensor<T>& pose, const nn::ForwardContext& ctx,
                              ForwardTrace<T>* trace) const {
  if (!image.defined() || image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != cfg_.image_size ||
      image.dim(2) != cfg_.image_size) {
    throw ConfigError("image input must be [3," + std::to_string(cfg_.image_size) + "," +
                      std::to_string(cfg_.image_size) + "], got " +
                      (image.defined() ? ad::shape_str(image.shape()) : std::string("undefined")));
  }
  std::vector<ad::AttentionProbe> probes;
  nn::ForwardContext local = ctx;
  if (trace) local.probes = &probes;

  const Tensor<T> f_img = backbone(image);
  const Tensor<T> e_pose = embed_pose(pose);
  const Tensor<T> f_pose = pose_transformer(e_pose, local);
  const Tensor<T> f_img_hat = fgam(f_img, local, trace);
  const Tensor<T> corr = mgcm(f_img_hat, f_pose, local, trace);
  const Tensor<T> logits = classifier(corr);
  if (trace) {
    trace->f_img = f_img;
    trace->e_pose = e_pose;
    trace->f_pose = f_pose;
    trace->logits = ad::reshape(logits, {cfg_.num_classes});
    ad::NoGradGuard no_grad;
    trace->probs = ad::softmax(trace->logits.detach(), 0);
    trace->probes = std::move(probes);
  }
  return logits;
}

template <typename T>
void ViskGat<T>::visit(const nn::ParamVisitor<T>& fn) {
  backbone.visit("backbone", fn);
  pose_embed.visit("pose.embed", fn);
  pose_block.visit("pose.block", fn);
  fgam_module.visit("fgam", fn);
  mgcm_module.visit("mgcm", fn);
  classifier.visit("classifier", fn);
}

template <typename T>
std::vector<Tensor<T>> ViskGat<T>::parameters() {
  std::vector<Tensor<T>> out;
  visit([&](const std::string&, Tensor<T>& p) { out.push_back(p); });
  return out;
}

template <typename T>
std::vector<std::string> ViskGat<T>::parameter_names() {
  std::vector<std::string> out;
  visit([&](const std::string& name, Tensor<T>&) { out.push_back(name); });
  return out;
}

template <typename T>
std::size_t ViskGat<T>::parameter_count() {
  std::size_t n = 0;
  visit([&](const std::string&, Tensor<T>& p) { n += p.numel(); });
  return n;
}

template <typename T>
void ViskGat<T>::zero_cross_attention_values() {
  auto& v = mgcm_module.cross_attn.v_proj;
  for (auto& w : v.weight.mutable_data()) w = T(0);
  for (auto& b : v.bias.mutable_data()) b = T(0);
}

template <typename T>
Tensor<T> pose_tensor(const Skeleton& s, std::size_t points) {
  if (points != kLandmarkCount) throw ConfigError("pose input expects 33 landmark slots");
  std::vector<T> values(points * 2, T(0));
  for (std::size_t i = 0; i < points; ++i) {
    if (!s.has(i)) continue;
    values[2 * i] = static_cast<T>(s.landmarks[i]->x);
    values[2 * i + 1] = static_cast<T>(s.landmarks[i]->y);
  }
  return Tensor<T>({points, 2}, std::move(values));
}

std::vector<NamedTensor> export_parameters(Model& model) {
  std::vector<NamedTensor> out;
  model.visit([&](const std::string& name, Tensor<float>& p) {
    out.push_back({name, p.shape(), std::vector<float>(p.data().begin(), p.data().end())});
  });
  return out;
}

void import_parameters(Model& model, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::size_t matched = 0;
  model.visit([&](const std::string& name, Tensor<float>& p) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw SchemaError("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape != p.shape()) {
      throw SchemaError("checkpoint parameter '" + name + "' has shape " + ad::shape_str(it->second->shape) +
                        ", model expects " + ad::shape_str(p.shape()));
    }
    std::copy(it->second->values.begin(), it->second->values.end(), p.mutable_data().begin());
    ++matched;
  });
  if (matched != tensors.size()) {
    throw SchemaError("checkpoint holds " + std::to_string(tensors.size() - matched) +
                      " parameters the model does not have");
  }
}

void save_model(Model& model, const std::filesystem::path& path) {
  save_checkpoint(path, export_parameters(model));
  std::ofstream cfg(path.string() + ".json", std::ios::trunc);
  if (!cfg) throw IoError("cannot write " + path.string() + ".json");
  cfg << model_config_to_json(model.config());
}

Model load_model(const std::filesystem::path& path) {
  Model model(load_model_config(path.string() + ".json"), 0);
  import_parameters(model, load_checkpoint(path));
  return model;
}

#define ERGORISK_INSTANTIATE(T)                 \
  template struct ResidualBlock<T>;             \
  template struct ImageBackbone<T>;             \
  template struct Fgam<T>;                      \
  template struct Mgcm<T>;                      \
  template class ViskGat<T>;                    \
  template Tensor<T> pose_tensor<T>(const Skeleton&, std::size_t);

ERGORISK_INSTANTIATE(float)
ERGORISK_INSTANTIATE(double)

#undef ERGORISK_INSTANTIATE

}  // namespace ergorisk
