#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ergorisk::metrics {

// Rows are true classes, columns predicted. Labels are 0-based.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 8);

  std::size_t classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

// Throws ValueError on length mismatch or labels outside [0, classes).
ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes = 8);

struct OvrCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  bool operator==(const OvrCounts&) const = default;
};

OvrCounts one_vs_rest_counts(const ConfusionMatrix& cm, std::size_t c);

// A ratio whose denominator was zero is reported as 0 and named in
// `undefined`.
struct BasicMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double specificity = 0.0;
  double npv = 0.0;
  double fpr = 0.0;
  double fdr = 0.0;
  double fnr = 0.0;
  std::vector<std::string> undefined;
};

BasicMetrics basic_metrics(const OvrCounts& counts);

// (p_o - p_e) / (1 - p_e); when p_e = 1 the result is 1 if p_o = 1, else 0.
double cohen_kappa(const ConfusionMatrix& cm);

// Covariance form over the full matrix:
//   (N*trace - sum_k r_k c_k) / sqrt((N^2 - sum r_k^2)(N^2 - sum c_k^2))
// 0 when either factor vanishes. Equals the binary formula on 2x2 input.
double mcc_multiclass(const ConfusionMatrix& cm);

// probs is row-major [n, classes].
// sqrt(mean_i ||p_i - y_i||_2^2)
double prob_rmse(std::span<const double> probs, std::span<const int> labels, std::size_t classes = 8);
// mean_i ||p_i - y_i||_1
double prob_mae(std::span<const double> probs, std::span<const int> labels, std::size_t classes = 8);
// Per-entry averages over all n*classes entries.
double prob_rmse_per_element(std::span<const double> probs, std::span<const int> labels, std::size_t classes = 8);
double prob_mae_per_element(std::span<const double> probs, std::span<const int> labels, std::size_t classes = 8);

// P(score of a positive > score of a negative), ties count one half.
// Returns 0.5 and sets `defined` false when one side is empty.
double roc_auc_ovr(std::span<const double> probs, std::span<const int> labels, std::size_t c, std::size_t classes = 8,
                   bool* defined = nullptr);

struct ClassReport {
  std::size_t support = 0;
  BasicMetrics metrics;
  double auc = 0.5;
  bool auc_defined = true;
};

struct EvalReport {
  std::size_t samples = 0;
  ConfusionMatrix cm{8};
  double accuracy = 0.0;
  std::vector<ClassReport> per_class;
  BasicMetrics macro;
  double macro_auc = 0.5;
  double kappa = 0.0;
  double mcc = 0.0;
  double prob_rmse = 0.0;
  double prob_mae = 0.0;
  double prob_rmse_per_element = 0.0;
  double prob_mae_per_element = 0.0;

  // Fixed key order.
  std::string to_json() const;
  // Class-wise table followed by the summary metrics.
  std::string to_text() const;
};

// predicted = argmax of each probability row (lowest index on ties).
EvalReport evaluate_predictions(std::span<const double> probs, std::span<const int> labels, std::size_t classes = 8);

}  // namespace ergorisk::metrics
