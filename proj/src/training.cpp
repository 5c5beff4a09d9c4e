#include "ergorisk/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ergorisk/errors.hpp"
#include "ergorisk/synth.hpp"
#include "ergorisk/text.hpp"

namespace ergorisk::training {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IoError(std::string("cannot open ") + what + " " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("train config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw ConfigError("train config: peak_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train config: weight_decay must be non-negative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("train config: warmup_fraction must lie in [0,1]");
  }
  if (!(div_factor >= 1.0)) throw ConfigError("train config: div_factor must be at least 1");
  if (!(label_smoothing >= 0.0 && label_smoothing <= 1.0)) {
    throw ConfigError("train config: label_smoothing must lie in [0,1]");
  }
  if (!(clip_norm > 0.0)) throw ConfigError("train config: clip_norm must be positive");
  if (!(train_fraction > 0.0) || !(val_fraction >= 0.0) || !(test_fraction >= 0.0)) {
    throw ConfigError("train config: split fractions must be non-negative with a positive train part");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("train config: split fractions must sum to 1");
  }
  if (!(target_train_accuracy >= 0.0 && target_train_accuracy <= 1.0)) {
    throw ConfigError("train config: target_train_accuracy must lie in [0,1]");
  }
}

std::string train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["peak_lr"] = c.peak_lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_fraction"] = c.warmup_fraction;
  j["div_factor"] = c.div_factor;
  j["label_smoothing"] = c.label_smoothing;
  if (std::isinf(c.clip_norm)) {
    j["clip_norm"] = nullptr;
  } else {
    j["clip_norm"] = c.clip_norm;
  }
  j["seed"] = c.seed;
  j["split"] = {c.train_fraction, c.val_fraction, c.test_fraction};
  j["target_train_accuracy"] = c.target_train_accuracy;
  return j.dump(2) + "\n";
}

TrainConfig parse_train_config(const std::string& json_text) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  try {
    if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
    if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
    if (j.contains("peak_lr")) c.peak_lr = j.at("peak_lr").get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("warmup_fraction")) c.warmup_fraction = j.at("warmup_fraction").get<double>();
    if (j.contains("div_factor")) c.div_factor = j.at("div_factor").get<double>();
    if (j.contains("label_smoothing")) c.label_smoothing = j.at("label_smoothing").get<double>();
    if (j.contains("clip_norm")) {
      const auto& v = j.at("clip_norm");
      c.clip_norm = v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("split")) {
      const auto& s = j.at("split");
      if (!s.is_array() || s.size() != 3) throw ConfigError("train config: split must list three fractions");
      c.train_fraction = s[0].get<double>();
      c.val_fraction = s[1].get<double>();
      c.test_fraction = s[2].get<double>();
    }
    if (j.contains("target_train_accuracy")) c.target_train_accuracy = j.at("target_train_accuracy").get<double>();
  } catch (const ordered_json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return parse_train_config(read_file(path, "train config"));
}

std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg) {
  return static_cast<std::size_t>(std::ceil(cfg.warmup_fraction * static_cast<double>(total_steps)));
}

double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (step > total_steps) {
    throw DomainError("schedule step " + std::to_string(step) + " outside 0.." + std::to_string(total_steps));
  }
  const double peak = cfg.peak_lr;
  const double floor = cfg.peak_lr / cfg.div_factor;
  const std::size_t warm = warmup_steps(total_steps, cfg);
  if (step < warm) {
    const double t = static_cast<double>(step) / static_cast<double>(warm);
    return floor + (peak - floor) * 0.5 * (1.0 - std::cos(std::numbers::pi * t));
  }
  if (step == warm || total_steps == warm) return peak;
  const double t = static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void AdamW<T>::step(std::span<ad::Tensor<T>> params, double lr, double weight_decay) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }
  if (params.size() != m_.size()) {
    throw ShapeError("optimizer state holds " + std::to_string(m_.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  ++t_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.numel() != m_[k].size()) {
      throw ShapeError("optimizer state for tensor " + std::to_string(k) + " does not match its size");
    }
    const bool has_grad = p.has_grad();
    const auto grad = p.grad();
    auto data = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      double theta = static_cast<double>(data[i]);
      theta -= lr * weight_decay * theta;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta -= lr * m_hat / (std::sqrt(v_hat) + options_.eps);
      data[i] = static_cast<T>(theta);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

SplitIndices stratified_split(std::span<const int> labels, double train_fraction, double val_fraction,
                              double test_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0 && val_fraction >= 0.0 && test_fraction >= 0.0) ||
      std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  const Rng root(seed);
  SplitIndices out;
  for (auto& [label, idx] : by_class) {
    Rng rng = root.split(static_cast<std::uint64_t>(static_cast<std::int64_t>(label)));
    rng.shuffle(idx);
    const double n = static_cast<double>(idx.size());
    const std::size_t n_train = std::min(idx.size(), static_cast<std::size_t>(std::llround(train_fraction * n)));
    const std::size_t n_val =
        std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(val_fraction * n)));
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::string split_to_json(const SplitIndices& split) {
  ordered_json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  return j.dump() + "\n";
}

SplitIndices parse_split(const std::string& json_text) {
  try {
    const auto j = ordered_json::parse(json_text);
    SplitIndices s;
    s.train = j.at("train").get<std::vector<std::size_t>>();
    s.val = j.at("val").get<std::vector<std::size_t>>();
    s.test = j.at("test").get<std::vector<std::size_t>>();
    return s;
  } catch (const ordered_json::exception& e) {
    throw SchemaError(std::string("split file: ") + e.what());
  }
}

std::vector<Sample> load_dataset(const std::filesystem::path& dir, std::size_t image_size) {
  const synth::Manifest manifest = synth::read_manifest(dir / "manifest.jsonl");
  const std::vector<Skeleton> skeletons = parse_landmark_file(dir / "skeletons.jsonl", PoseFormat::jsonl);
  std::map<std::string, const Skeleton*> by_id;
  for (const auto& s : skeletons) by_id[s.id] = &s;

  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const auto it = by_id.find(e.id);
    if (it == by_id.end()) throw SchemaError("sample '" + e.id + "' has no skeleton record");
    const synth::Image img = synth::read_ppm(dir / e.image);
    if (img.size != image_size) {
      throw ConfigError("image " + e.image + " is " + std::to_string(img.size) + "x" + std::to_string(img.size) +
                        " but the model expects " + std::to_string(image_size));
    }
    out.push_back({e.id, synth::image_tensor<float>(img), pose_tensor<float>(filter_visibility(*it->second)),
                   e.class_label - 1});
  }
  return out;
}

std::string log_csv(const std::vector<EpochLog>& rows) {
  std::string out = "epoch,lr,train_loss,train_acc,val_loss,val_acc\n";
  const auto num = [](double v) { return std::isnan(v) ? std::string("nan") : text::format_double(v); };
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + num(r.lr) + "," + num(r.train_loss) + "," + num(r.train_acc) + "," +
           num(r.val_loss) + "," + num(r.val_acc) + "\n";
  }
  return out;
}

Predictions predict(const Model& model, const std::vector<Sample>& data, std::span<const std::size_t> indices,
                    double label_smoothing, std::size_t threads) {
  const std::size_t k = model.config().num_classes;
  const std::size_t n = indices.size();
  Predictions out;
  out.probs.assign(n * k, 0.0);
  out.labels.resize(n);
  std::vector<double> losses(n, 0.0);

  const auto work = [&](std::size_t begin, std::size_t end) {
    ad::NoGradGuard no_grad;
    const nn::ForwardContext ctx;
    for (std::size_t i = begin; i < end; ++i) {
      const Sample& s = data.at(indices[i]);
      const ad::Tensor<float> logits = model.forward(s.image, s.pose, ctx);
      const int label = s.label;
      losses[i] = ad::cross_entropy_smoothed(logits, std::span<const int>(&label, 1), label_smoothing).item();
      const ad::Tensor<float> p = ad::softmax(logits, 1);
      for (std::size_t c = 0; c < k; ++c) out.probs[i * k + c] = p[c];
      out.labels[i] = s.label;
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, n));
  if (workers == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(std::min(n, t * chunk), std::min(n, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  double total = 0.0;
  for (const double l : losses) total += l;
  out.loss = n ? total / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
  return out;
}

metrics::EvalReport evaluate(const Model& model, const std::vector<Sample>& data,
                             std::span<const std::size_t> indices, std::size_t threads) {
  const Predictions p = predict(model, data, indices, 0.0, threads);
  return metrics::evaluate_predictions(p.probs, p.labels, model.config().num_classes);
}

TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Sample>& data, const SplitIndices& split,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (split.train.empty()) throw ConfigError("training split is empty");
  for (const auto i : split.train) {
    if (i >= data.size()) throw ConfigError("split index " + std::to_string(i) + " outside the dataset");
  }

  std::vector<ad::Tensor<float>> params = model.parameters();
  AdamW<float> optimizer;
  const Rng root(cfg.seed);
  Rng dropout_rng = root.split(0xd0);
  const std::size_t steps_per_epoch = (split.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t k = model.config().num_classes;

  TrainResult result;
  result.best_val_acc = -1.0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = split.train;
    Rng shuffle_rng = root.split(0x5eed0000 + epoch);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      nn::ForwardContext ctx;
      ctx.train = true;
      ctx.rng = &dropout_rng;
      std::vector<ad::Tensor<float>> rows;
      std::vector<int> labels;
      for (std::size_t i = b; i < end; ++i) {
        const Sample& s = data[order[i]];
        rows.push_back(model.forward(s.image, s.pose, ctx));
        labels.push_back(s.label);
      }
      const ad::Tensor<float> logits = ad::stack_rows(rows);
      const ad::Tensor<float> loss = ad::cross_entropy_smoothed(logits, std::span<const int>(labels), cfg.label_smoothing);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw NumericFault("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      for (auto& p : params) p.zero_grad();
      ad::backward(loss);
      if (std::isfinite(cfg.clip_norm)) {
        const double norm = ad::clip_global_norm(std::span<ad::Tensor<float>>(params), cfg.clip_norm);
        if (!std::isfinite(norm)) {
          throw NumericFault("non-finite gradient norm at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
        }
      }
      lr = onecycle_lr(step, total_steps, cfg);
      optimizer.step(std::span<ad::Tensor<float>>(params), lr, cfg.weight_decay);
      ++step;

      loss_sum += loss_value * static_cast<double>(end - b);
      for (std::size_t r = 0; r < end - b; ++r) {
        if (argmax(logits.data().subspan(r * k, k)) == static_cast<std::size_t>(labels[r])) ++correct;
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    row.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (split.val.empty()) {
      row.val_loss = std::numeric_limits<double>::quiet_NaN();
      row.val_acc = std::numeric_limits<double>::quiet_NaN();
      result.best_epoch = epoch;
      result.best_parameters.clear();
    } else {
      const Predictions p = predict(model, data, split.val, cfg.label_smoothing);
      std::size_t hits = 0;
      for (std::size_t i = 0; i < p.labels.size(); ++i) {
        const auto probs = std::span<const double>(p.probs).subspan(i * k, k);
        if (static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin()) == p.labels[i]) ++hits;
      }
      row.val_loss = p.loss;
      row.val_acc = static_cast<double>(hits) / static_cast<double>(p.labels.size());
      if (row.val_acc > result.best_val_acc) {
        result.best_val_acc = row.val_acc;
        result.best_epoch = epoch;
        result.best_parameters = export_parameters(model);
      }
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);

    if (cfg.target_train_accuracy > 0.0 || epoch == cfg.epochs) {
      const metrics::EvalReport r = evaluate(model, data, split.train);
      result.final_train_acc = r.accuracy;
      if (cfg.target_train_accuracy > 0.0 && r.accuracy >= cfg.target_train_accuracy) break;
    }
  }
  if (split.val.empty()) {
    result.best_val_acc = std::numeric_limits<double>::quiet_NaN();
    result.best_parameters = export_parameters(model);
  }
  return result;
}

}  // namespace ergorisk::training
