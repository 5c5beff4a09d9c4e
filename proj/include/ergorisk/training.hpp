#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ergorisk/metrics.hpp"
#include "ergorisk/model.hpp"

namespace ergorisk::training {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  double peak_lr = 3e-4;
  double weight_decay = 1e-5;
  double warmup_fraction = 0.10;
  double div_factor = 1000.0;
  double label_smoothing = 0.1;
  double clip_norm = 1.0;  // infinity disables clipping
  std::uint64_t seed = 0;
  double train_fraction = 0.70;
  double val_fraction = 0.10;
  double test_fraction = 0.20;
  // Stop once eval-mode accuracy on the training split reaches this value.
  // 0 disables the check.
  double target_train_accuracy = 0.0;

  // Throws ConfigError.
  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
// Keys absent from the document keep their defaults.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);

// Warmup covers the first ceil(warmup_fraction * total_steps) steps with a
// cosine ramp from peak/div_factor to peak; a cosine decay back to
// peak/div_factor follows. Throws DomainError for step outside
// [0, total_steps].
double onecycle_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);
std::size_t warmup_steps(std::size_t total_steps, const TrainConfig& cfg);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay (theta -= lr * wd * theta) followed by the
// bias-corrected Adam update. Parameters without a gradient buffer count
// as zero gradient.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  // Throws ShapeError when `params` differs in count or size from the
  // first call.
  void step(std::span<ad::Tensor<T>> params, double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  AdamWOptions options_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Per class, shuffles that class's indices and cuts them at
// round(train * n_c) and round(val * n_c); the remainder is the test part.
// Each list is sorted ascending.
SplitIndices stratified_split(std::span<const int> labels, double train_fraction, double val_fraction,
                              double test_fraction, std::uint64_t seed);

std::string split_to_json(const SplitIndices& split);
SplitIndices parse_split(const std::string& json_text);

struct Sample {
  std::string id;
  ad::Tensor<float> image;  // [3,S,S]
  ad::Tensor<float> pose;   // [33,2]
  int label = 0;            // class - 1
};

// Reads manifest.jsonl, skeletons.jsonl and the images of a generated
// dataset directory. Throws ConfigError when an image is not
// image_size x image_size.
std::vector<Sample> load_dataset(const std::filesystem::path& dir, std::size_t image_size);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;  // NaN when the validation split is empty
  double val_acc = 0.0;
};

std::string log_csv(const std::vector<EpochLog>& rows);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_acc = 0.0;
  // Eval-mode accuracy on the training split after the last epoch.
  double final_train_acc = 0.0;
  std::vector<NamedTensor> best_parameters;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch training on data[split.train]: forward each sample, smoothed
// cross-entropy over the batch, backward, clip, AdamW with the one-cycle
// rate. The best validation accuracy (earliest epoch on ties) selects the
// returned parameters; without a validation split the last epoch does.
// Throws NumericFault naming epoch and step when the loss is not finite.
TrainResult train(Model& model, const TrainConfig& cfg, const std::vector<Sample>& data, const SplitIndices& split,
                  const EpochCallback& on_epoch = {});

struct Predictions {
  std::vector<double> probs;  // [n, classes]
  std::vector<int> labels;
  double loss = 0.0;  // mean smoothed cross-entropy
};

// Eval-mode forward over data[indices]; deterministic for any thread count.
Predictions predict(const Model& model, const std::vector<Sample>& data, std::span<const std::size_t> indices,
                    double label_smoothing, std::size_t threads = 1);

metrics::EvalReport evaluate(const Model& model, const std::vector<Sample>& data,
                             std::span<const std::size_t> indices, std::size_t threads = 1);

}  // namespace ergorisk::training
