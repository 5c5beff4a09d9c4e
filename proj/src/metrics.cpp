#include "ergorisk/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ergorisk/errors.hpp"

namespace ergorisk::metrics {
namespace {

using ordered_json = nlohmann::ordered_json;

double ratio(std::uint64_t num, std::uint64_t den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

void check_probs(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (classes == 0) throw ValueError("class count must be positive");
  if (probs.size() != labels.size() * classes) {
    throw ValueError("probability matrix holds " + std::to_string(probs.size()) + " entries for " +
                     std::to_string(labels.size()) + " labels of " + std::to_string(classes) + " classes");
  }
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ValueError("label " + std::to_string(y) + " outside 0.." + std::to_string(classes - 1));
    }
  }
}

// Sums of squared and absolute deviations from the one-hot target.
std::pair<double, double> deviation_sums(std::span<const double> probs, std::span<const int> labels,
                                         std::size_t classes) {
  check_probs(probs, labels, classes);
  double sq = 0.0;
  double abs = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      const double target = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
      const double d = probs[i * classes + c] - target;
      sq += d * d;
      abs += std::abs(d);
    }
  }
  return {sq, abs};
}

ordered_json metrics_json(const BasicMetrics& m) {
  ordered_json j;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["f1"] = m.f1;
  j["specificity"] = m.specificity;
  j["npv"] = m.npv;
  j["fpr"] = m.fpr;
  j["fdr"] = m.fdr;
  j["fnr"] = m.fnr;
  j["undefined"] = m.undefined;
  return j;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ValueError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= k_ || predicted >= k_) throw ValueError("class index outside the confusion matrix");
  counts_[truth * k_ + predicted] += n;
}

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < k_; ++c) t += at(c, c);
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(c, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, c);
  return s;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> predicted, std::size_t classes) {
  if (truth.size() != predicted.size()) {
    throw ValueError("truth and prediction lengths differ (" + std::to_string(truth.size()) + " vs " +
                     std::to_string(predicted.size()) + ")");
  }
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0) throw ValueError("negative class label");
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

OvrCounts one_vs_rest_counts(const ConfusionMatrix& cm, std::size_t c) {
  if (c >= cm.classes()) throw ValueError("class index outside the confusion matrix");
  OvrCounts o;
  o.tp = cm.at(c, c);
  o.fn = cm.row_sum(c) - o.tp;
  o.fp = cm.col_sum(c) - o.tp;
  o.tn = cm.total() - o.tp - o.fn - o.fp;
  return o;
}

BasicMetrics basic_metrics(const OvrCounts& k) {
  BasicMetrics m;
  m.precision = ratio(k.tp, k.tp + k.fp, "precision", m.undefined);
  m.recall = ratio(k.tp, k.tp + k.fn, "recall", m.undefined);
  m.specificity = ratio(k.tn, k.tn + k.fp, "specificity", m.undefined);
  m.npv = ratio(k.tn, k.tn + k.fn, "npv", m.undefined);
  // 2PR/(P+R) = 2TP/(2TP+FP+FN)
  m.f1 = ratio(2 * k.tp, 2 * k.tp + k.fp + k.fn, "f1", m.undefined);
  // Complements share their base ratio's denominator and zero rule.
  m.fpr = k.tn + k.fp ? 1.0 - m.specificity : 0.0;
  m.fdr = k.tp + k.fp ? 1.0 - m.precision : 0.0;
  m.fnr = k.tp + k.fn ? 1.0 - m.recall : 0.0;
  return m;
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  if (n == 0.0) return 0.0;
  const double p_o = static_cast<double>(cm.trace()) / n;
  double p_e = 0.0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    p_e += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c));
  }
  p_e /= n * n;
  if (p_e == 1.0) return p_o == 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

double mcc_multiclass(const ConfusionMatrix& cm) {
  const double n = static_cast<double>(cm.total());
  const double trace = static_cast<double>(cm.trace());
  double rc = 0.0, rr = 0.0, cc = 0.0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    const double r = static_cast<double>(cm.row_sum(k));
    const double c = static_cast<double>(cm.col_sum(k));
    rc += r * c;
    rr += r * r;
    cc += c * c;
  }
  const double denom = std::sqrt((n * n - rr) * (n * n - cc));
  if (denom == 0.0) return 0.0;
  return (n * trace - rc) / denom;
}

double prob_rmse(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) return 0.0;
  return std::sqrt(deviation_sums(probs, labels, classes).first / static_cast<double>(labels.size()));
}

double prob_mae(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) return 0.0;
  return deviation_sums(probs, labels, classes).second / static_cast<double>(labels.size());
}

double prob_rmse_per_element(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) return 0.0;
  return std::sqrt(deviation_sums(probs, labels, classes).first / static_cast<double>(labels.size() * classes));
}

double prob_mae_per_element(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) return 0.0;
  return deviation_sums(probs, labels, classes).second / static_cast<double>(labels.size() * classes);
}

double roc_auc_ovr(std::span<const double> probs, std::span<const int> labels, std::size_t c, std::size_t classes,
                   bool* defined) {
  check_probs(probs, labels, classes);
  if (c >= classes) throw ValueError("class index outside the probability matrix");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto score = [&](std::size_t i) { return probs[i * classes + c]; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score(a) < score(b); });

  // Mann-Whitney U from midranks of tied groups.
  double rank_sum_pos = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && score(order[j]) == score(order[i])) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (static_cast<std::size_t>(labels[order[k]]) == c) {
        rank_sum_pos += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    if (defined) *defined = false;
    return 0.5;
  }
  if (defined) *defined = true;
  const double p = static_cast<double>(positives);
  const double u = rank_sum_pos - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

EvalReport evaluate_predictions(std::span<const double> probs, std::span<const int> labels, std::size_t classes) {
  check_probs(probs, labels, classes);
  EvalReport r;
  r.samples = labels.size();
  std::vector<int> predicted(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.subspan(i * classes, classes);
    predicted[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  r.cm = confusion(labels, predicted, classes);
  r.accuracy = r.samples ? static_cast<double>(r.cm.trace()) / static_cast<double>(r.samples) : 0.0;

  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassReport cr;
    cr.support = r.cm.row_sum(c);
    cr.metrics = basic_metrics(one_vs_rest_counts(r.cm, c));
    cr.auc = roc_auc_ovr(probs, labels, c, classes, &cr.auc_defined);
    if (cr.auc_defined) {
      auc_sum += cr.auc;
      ++auc_count;
    }
    r.macro.precision += cr.metrics.precision;
    r.macro.recall += cr.metrics.recall;
    r.macro.f1 += cr.metrics.f1;
    r.macro.specificity += cr.metrics.specificity;
    r.macro.npv += cr.metrics.npv;
    r.macro.fpr += cr.metrics.fpr;
    r.macro.fdr += cr.metrics.fdr;
    r.macro.fnr += cr.metrics.fnr;
    r.per_class.push_back(std::move(cr));
  }
  const double k = static_cast<double>(classes);
  for (double* v : {&r.macro.precision, &r.macro.recall, &r.macro.f1, &r.macro.specificity, &r.macro.npv,
                    &r.macro.fpr, &r.macro.fdr, &r.macro.fnr}) {
    *v /= k;
  }
  r.macro_auc = auc_count ? auc_sum / static_cast<double>(auc_count) : 0.5;
  r.kappa = cohen_kappa(r.cm);
  r.mcc = mcc_multiclass(r.cm);
  r.prob_rmse = prob_rmse(probs, labels, classes);
  r.prob_mae = prob_mae(probs, labels, classes);
  r.prob_rmse_per_element = prob_rmse_per_element(probs, labels, classes);
  r.prob_mae_per_element = prob_mae_per_element(probs, labels, classes);
  return r;
}

std::string EvalReport::to_json() const {
  ordered_json j;
  j["samples"] = samples;
  j["accuracy"] = accuracy;
  j["cohen_kappa"] = kappa;
  j["mcc"] = mcc;
  j["prob_rmse"] = prob_rmse;
  j["prob_mae"] = prob_mae;
  j["prob_rmse_per_element"] = prob_rmse_per_element;
  j["prob_mae_per_element"] = prob_mae_per_element;
  j["macro"] = metrics_json(macro);
  j["macro"]["auc"] = macro_auc;
  ordered_json classes = ordered_json::array();
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    ordered_json e;
    e["class"] = c + 1;
    e["support"] = per_class[c].support;
    auto m = metrics_json(per_class[c].metrics);
    for (auto it = m.begin(); it != m.end(); ++it) e[it.key()] = it.value();
    e["auc"] = per_class[c].auc;
    e["auc_defined"] = per_class[c].auc_defined;
    classes.push_back(std::move(e));
  }
  j["per_class"] = std::move(classes);
  ordered_json rows = ordered_json::array();
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    ordered_json row = ordered_json::array();
    for (std::size_t k = 0; k < cm.classes(); ++k) row.push_back(cm.at(i, k));
    rows.push_back(std::move(row));
  }
  j["confusion"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "class  support  precision  recall  f1      specif  npv     fpr     fdr     fnr     auc\n";
  const auto line = [&](const std::string& label, const std::string& support, const BasicMetrics& m, double auc) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-6s %-8s %-10s %-7s %-7s %-7s %-7s %-7s %-7s %-7s %s\n", label.c_str(),
                  support.c_str(), fixed(m.precision).c_str(), fixed(m.recall).c_str(), fixed(m.f1).c_str(),
                  fixed(m.specificity).c_str(), fixed(m.npv).c_str(), fixed(m.fpr).c_str(), fixed(m.fdr).c_str(),
                  fixed(m.fnr).c_str(), fixed(auc).c_str());
    out << buf;
  };
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    line(std::to_string(c + 1), std::to_string(per_class[c].support), per_class[c].metrics, per_class[c].auc);
  }
  line("avg", std::to_string(samples), macro, macro_auc);
  out << "\naccuracy  " << fixed(accuracy) << "\n";
  out << "kappa     " << fixed(kappa) << "\n";
  out << "mcc       " << fixed(mcc) << "\n";
  out << "rmse      " << fixed(prob_rmse) << "  (per element " << fixed(prob_rmse_per_element) << ")\n";
  out << "mae       " << fixed(prob_mae) << "  (per element " << fixed(prob_mae_per_element) << ")\n";
  return out.str();
}

}  // namespace ergorisk::metrics
