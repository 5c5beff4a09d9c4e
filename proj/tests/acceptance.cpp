// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ergorisk/checks.hpp"
#include "ergorisk/metrics.hpp"
#include "ergorisk/model.hpp"
#include "ergorisk/reba.hpp"
#include "ergorisk/synth.hpp"
#include "ergorisk/text.hpp"
#include "ergorisk/training.hpp"
#include "support.hpp"

using namespace ergorisk;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Verdict {
  bool passed = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Independent REBA pipeline: its own angle code, band constants and lookup
// tables, none of them shared with the library.

namespace oracle {

constexpr double kDeg = 180.0 / std::numbers::pi;

struct P {
  double x, y;
};

P at(const Skeleton& s, std::size_t i) { return {s.landmarks[i]->x, s.landmarks[i]->y}; }
P mid(P a, P b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2}; }

double angle_at(P a, P b, P c) {
  double d = std::abs(std::atan2(a.y - b.y, a.x - b.x) - std::atan2(c.y - b.y, c.x - b.x));
  if (d > std::numbers::pi) d = 2 * std::numbers::pi - d;
  return d * kDeg;
}

double from_vertical(P top, P bottom) {
  return std::atan2(std::abs(top.x - bottom.x) + 1e-6, std::abs(top.y - bottom.y)) * kDeg;
}

// Band search: the band with the greatest lower edge not above the angle.
int band(double deg, const std::vector<std::pair<double, int>>& lower_edges) {
  int score = -1;
  for (const auto& [lo, s] : lower_edges) {
    if (deg >= lo) score = s;
  }
  return score;
}

int trunk(double d) { return band(d, {{0, 1}, {5, 2}, {20, 3}, {60, 4}}); }
int neck(double d) { return band(d, {{0, 1}, {20, 2}}); }
int legs(double flexion) { return band(flexion, {{0, 1}, {30, 2}, {60, 3}}); }
int upper_arm(double d) { return band(d, {{0, 1}, {20, 2}, {45, 3}, {90, 4}}); }
// Protocol form: 60..100 degrees of elbow flexion scores 1.
int lower_arm(double interior) {
  const double flexion = 180.0 - interior;
  return flexion > 60.0 && flexion <= 100.0 ? 1 : 2;
}
int wrist(double deviation) { return band(deviation, {{0, 1}, {15, 2}}); }

constexpr int kA[5][3][4] = {
    {{1, 2, 3, 4}, {1, 2, 3, 4}, {3, 3, 5, 6}}, {{2, 3, 4, 5}, {3, 4, 5, 6}, {4, 5, 6, 7}},
    {{2, 4, 5, 6}, {4, 5, 6, 7}, {5, 6, 7, 8}}, {{3, 5, 6, 7}, {5, 6, 7, 8}, {6, 7, 8, 9}},
    {{4, 6, 7, 8}, {6, 7, 8, 9}, {7, 8, 9, 9}},
};
constexpr int kB[6][2][3] = {
    {{1, 2, 2}, {1, 2, 3}}, {{1, 2, 3}, {2, 3, 4}}, {{3, 4, 5}, {4, 5, 5}},
    {{4, 5, 5}, {5, 6, 7}}, {{6, 7, 8}, {7, 8, 8}}, {{7, 8, 8}, {8, 9, 9}},
};
constexpr int kC[12][12] = {
    {1, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7},          {1, 2, 2, 3, 4, 4, 5, 6, 6, 7, 7, 8},
    {2, 3, 3, 3, 4, 5, 6, 7, 7, 8, 8, 8},          {3, 4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9},
    {4, 4, 4, 5, 6, 7, 8, 8, 9, 9, 9, 9},          {6, 6, 6, 7, 8, 8, 9, 9, 10, 10, 10, 10},
    {7, 7, 7, 8, 9, 9, 9, 10, 10, 11, 11, 11},     {8, 8, 8, 9, 10, 10, 10, 10, 10, 11, 11, 11},
    {9, 9, 9, 10, 10, 10, 11, 11, 11, 12, 12, 12}, {10, 10, 10, 11, 11, 11, 11, 12, 12, 12, 12, 12},
    {11, 11, 11, 11, 12, 12, 12, 12, 12, 12, 12, 12}, {12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12, 12},
};

struct Outcome {
  int trunk, neck, legs, upper, lower, wrist, reba, cls;
};

Outcome score(const Skeleton& s) {
  const LandmarkIndexMap m;
  const P sh = mid(at(s, m.left_shoulder), at(s, m.right_shoulder));
  const P hp = mid(at(s, m.left_hip), at(s, m.right_hip));
  const P ear = mid(at(s, m.left_ear), at(s, m.right_ear));
  const double t = from_vertical(sh, hp);
  Outcome o{};
  o.trunk = trunk(t);
  o.neck = neck(std::abs(from_vertical(ear, sh) - t));
  o.legs = std::max(legs(180 - angle_at(at(s, m.left_hip), at(s, m.left_knee), at(s, m.left_ankle))),
                    legs(180 - angle_at(at(s, m.right_hip), at(s, m.right_knee), at(s, m.right_ankle))));
  o.upper = std::max(upper_arm(angle_at(at(s, m.left_hip), at(s, m.left_shoulder), at(s, m.left_elbow))),
                     upper_arm(angle_at(at(s, m.right_hip), at(s, m.right_shoulder), at(s, m.right_elbow))));
  o.lower = std::max(lower_arm(angle_at(at(s, m.left_shoulder), at(s, m.left_elbow), at(s, m.left_wrist))),
                     lower_arm(angle_at(at(s, m.right_shoulder), at(s, m.right_elbow), at(s, m.right_wrist))));
  o.wrist = std::max(wrist(std::abs(180 - angle_at(at(s, m.left_elbow), at(s, m.left_wrist), at(s, m.left_index)))),
                     wrist(std::abs(180 - angle_at(at(s, m.right_elbow), at(s, m.right_wrist), at(s, m.right_index)))));
  const int a = kA[o.trunk - 1][o.neck - 1][o.legs - 1];
  const int b = kB[o.upper - 1][o.lower - 1][o.wrist - 1];
  o.reba = kC[a - 1][b - 1];
  o.cls = o.reba >= 8 ? 8 : o.reba;
  return o;
}

}  // namespace oracle

Verdict reba_oracle() {
  const auto t0 = Clock::now();
  const Rng root(20240601);
  const RebaConfig cfg = default_reba_config();
  std::size_t agree = 0;
  std::vector<std::size_t> classes(9, 0);
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = root.split(i);
    const Skeleton s = synth::figure_to_skeleton(synth::sample_figure(rng), synth::sample_id(i));
    const RebaResult r = assess(s, cfg);
    const oracle::Outcome o = oracle::score(s);
    const bool same = r.scores.trunk == o.trunk && r.scores.neck == o.neck && r.scores.legs == o.legs &&
                      r.scores.upper_arm == o.upper && r.scores.lower_arm == o.lower && r.scores.wrist == o.wrist &&
                      r.s_reba == o.reba && r.class_label == o.cls;
    if (same) ++agree;
    classes[static_cast<std::size_t>(o.cls)] += 1;
  }
  const double secs = seconds_since(t0);
  std::size_t covered = 0;
  for (int c = 1; c <= 8; ++c) covered += classes[c] > 0;
  return {agree == n && secs < 10.0, std::to_string(agree) + "/" + std::to_string(n) + " agree, " +
                                         std::to_string(covered) + " classes seen, " + num(secs) + " s"};
}

// ---------------------------------------------------------------------------

Verdict geometry_exactness() {
  double worst_exact = 0.0;
  double worst_eps = 0.0;
  const auto exact = [&](double got, double want) { worst_exact = std::max(worst_exact, std::abs(got - want)); };
  const auto with_eps = [&](double got, double want) { worst_eps = std::max(worst_eps, std::abs(got - want)); };
  exact(joint_angle({1, 0}, {0, 0}, {0, 1}), 90.0);
  exact(joint_angle({1, 0}, {0, 0}, {-1, 0}), 180.0);
  const double r60 = std::numbers::pi / 3;
  exact(joint_angle({1, 0}, {0, 0}, {std::cos(r60), std::sin(r60)}), 60.0);
  with_eps(inclination_angle({0.5, 0.2}, {0.5, 0.6}, 1e-6), 0.0);
  with_eps(inclination_angle({0.4, 0.2}, {0.5, 0.3}, 1e-6), 45.0);
  exact(inclination_angle({0.2, 0.5}, {0.6, 0.5}, 1e-6), 90.0);

  Rng rng(77);
  double worst_invariance = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Point2 a{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Point2 b{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Point2 c{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const double s = std::exp(rng.uniform(-3, 3));
    const double th = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Point2 shift{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const auto f = [&](Point2 p) {
      return Point2{s * (std::cos(th) * p.x - std::sin(th) * p.y) + shift.x,
                    s * (std::sin(th) * p.x + std::cos(th) * p.y) + shift.y};
    };
    worst_invariance = std::max(worst_invariance, std::abs(joint_angle(a, b, c) - joint_angle(f(a), f(b), f(c))));
  }
  return {worst_exact <= 1e-9 && worst_eps <= 1e-3 && worst_invariance <= 1e-9,
          "exact cases " + num(worst_exact) + ", eps cases " + num(worst_eps) + ", transform invariance " +
              num(worst_invariance)};
}

// ---------------------------------------------------------------------------

Verdict gradient_checks() {
  const auto t0 = Clock::now();
  const std::size_t seeds = 10;
  double worst = 0.0;
  std::size_t cases = 0, failed = 0, checked = 0, skipped = 0, refined = 0;
  std::string names;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    for (const auto& r : checks::gradcheck_suite(seed)) {
      ++cases;
      worst = std::max(worst, r.max_relative_error);
      checked += r.checked;
      skipped += r.skipped_kinks;
      refined += r.refined;
      if (!r.passed) {
        ++failed;
        names += " " + r.name + "@" + std::to_string(seed);
      }
    }
  }
  const double secs = seconds_since(t0);
  // Kink skips must stay rare or they would hide real mismatches.
  const bool kinks_rare = skipped * 100 <= checked;
  return {failed == 0 && kinks_rare && secs < 120.0,
          std::to_string(cases) + " checks over " + std::to_string(seeds) + " seeds, max rel err " + num(worst) + ", " +
              std::to_string(checked) + " coords, " + std::to_string(skipped) + " kink skips, " +
              std::to_string(refined) + " step refinements, " + num(secs) + " s" +
              (failed ? ", failed:" + names : "")};
}

// ---------------------------------------------------------------------------

Verdict attention_norm_invariants(const Model& desk_model) {
  double worst_row = 0.0;
  std::size_t maps = 0;
  Rng rng(404);
  ad::NoGradGuard no_grad;
  const auto rows_of = [&](const std::vector<ad::AttentionProbe>& probes) {
    for (const auto& p : probes) {
      ++maps;
      for (std::size_t r = 0; r < p.heads * p.n_q; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.n_k; ++j) s += p.probs[r * p.n_k + j];
        worst_row = std::max(worst_row, std::abs(s - 1.0));
      }
    }
  };
  const Model tiny(ViskGatConfig::tiny(), 3);
  for (const Model* m : {&tiny, &desk_model}) {
    const std::size_t sz = m->config().image_size;
    for (int k = 0; k < 3; ++k) {
      ForwardTrace<float> t;
      m->forward(Tensor<float>::uniform({3, sz, sz}, 0, 1, rng), Tensor<float>::uniform({33, 2}, 0, 1, rng), {}, &t);
      rows_of(t.probes);
    }
  }

  // Cross-attention with the pose tokens in a shuffled order.
  double worst_perm = 0.0;
  {
    const std::size_t sz = desk_model.config().image_size;
    ForwardTrace<float> t;
    desk_model.forward(Tensor<float>::uniform({3, sz, sz}, 0, 1, rng), Tensor<float>::uniform({33, 2}, 0, 1, rng), {},
                       &t);
    const std::size_t d = t.f_pose_proj.dim(1);
    for (int k = 0; k < 5; ++k) {
      std::vector<std::size_t> perm(33);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm);
      std::vector<float> shuffled;
      for (const auto i : perm)
        for (std::size_t c = 0; c < d; ++c) shuffled.push_back(t.f_pose_proj[i * d + c]);
      const auto a = desk_model.mgcm_module.cross_attn(t.f_img_proj, t.f_pose_proj, {});
      const auto b = desk_model.mgcm_module.cross_attn(t.f_img_proj, Tensor<float>({33, d}, shuffled), {});
      for (std::size_t i = 0; i < a.numel(); ++i) worst_perm = std::max(worst_perm, double(std::abs(a[i] - b[i])));
    }
  }

  // Layer norm statistics before the affine step.
  double worst_mean = 0.0, worst_var = 0.0;
  for (int k = 0; k < 50; ++k) {
    const std::size_t d = 128;
    std::vector<double> row(d);
    const double spread = rng.uniform(1.0, 20.0), offset = rng.uniform(-50.0, 50.0);
    for (auto& v : row) v = offset + spread * rng.normal();
    const auto y = ad::layer_norm(Tensor<double>({4, d / 4}, row), Tensor<double>::ones({d / 4}),
                                  Tensor<double>::zeros({d / 4}));
    for (std::size_t r = 0; r < 4; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t c = 0; c < d / 4; ++c) mean += y[r * (d / 4) + c];
      mean /= (d / 4);
      for (std::size_t c = 0; c < d / 4; ++c) var += std::pow(y[r * (d / 4) + c] - mean, 2);
      var /= (d / 4);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
    }
  }
  return {worst_row <= 1e-6 && worst_perm <= 1e-5 && worst_mean <= 1e-6 && worst_var <= 1e-5,
          std::to_string(maps) + " attention maps, row sum err " + num(worst_row) + ", K/V permutation " +
              num(worst_perm) + ", LN mean " + num(worst_mean) + ", LN var " + num(worst_var)};
}

// ---------------------------------------------------------------------------

Verdict full_size_shapes() {
  ad::NoGradGuard no_grad;
  const ViskGatConfig cfg = ViskGatConfig::paper();
  const Model model(cfg, 0);
  Rng rng(5);
  ForwardTrace<float> t;
  model.forward(Tensor<float>::uniform({3, 224, 224}, 0, 1, rng), Tensor<float>::uniform({33, 2}, 0, 1, rng), {}, &t);
  const bool ok = t.f_img.shape() == ad::Shape{256, 128} && t.f_pose.shape() == ad::Shape{33, 128} &&
                  t.f_attn.shape() == ad::Shape{256, 256} && t.f_corr.shape() == ad::Shape{512} &&
                  t.logits.shape() == ad::Shape{8};
  return {ok, "F_img " + ad::shape_str(t.f_img.shape()) + ", F_pose " + ad::shape_str(t.f_pose.shape()) +
                  ", F_attn " + ad::shape_str(t.f_attn.shape()) + ", F_corr " + ad::shape_str(t.f_corr.shape()) +
                  ", logits " + ad::shape_str(t.logits.shape())};
}

// ---------------------------------------------------------------------------

Verdict loss_schedule_anchors() {
  double worst_ce = 0.0;
  Rng rng(6);
  for (const double s : {0.0, 0.05, 0.1, 0.25, 0.5, 0.9, 1.0}) {
    std::vector<int> labels(5);
    for (auto& l : labels) l = static_cast<int>(rng.below(8));
    const double c = rng.uniform(-3, 3);
    const double loss = ad::cross_entropy_smoothed(Tensor<double>({5, 8}, c), std::span<const int>(labels), s).item();
    worst_ce = std::max(worst_ce, std::abs(loss - std::log(8.0)));
  }
  const training::TrainConfig cfg;
  double worst_lr = 0.0;
  for (const std::size_t total : {100u, 437u, 1000u, 35000u}) {
    const std::size_t warm = static_cast<std::size_t>(std::ceil(0.10 * total));
    worst_lr = std::max(worst_lr, std::abs(training::onecycle_lr(0, total, cfg) - 3e-7) / 3e-7);
    worst_lr = std::max(worst_lr, std::abs(training::onecycle_lr(warm, total, cfg) - 3e-4) / 3e-4);
  }
  return {worst_ce <= 1e-6 && worst_lr <= 1e-9,
          "uniform-logit CE err " + num(worst_ce) + ", schedule rel err " + num(worst_lr)};
}

// ---------------------------------------------------------------------------

struct OverfitRun {
  Verdict verdict;
  std::vector<training::Sample> data;
};

std::optional<Model> trained_model;

OverfitRun overfit(const std::filesystem::path& dir) {
  synth::GenOptions gen;
  gen.image_size = 64;
  synth::gen_dataset(64, 7, dir, default_reba_config(), gen);
  OverfitRun run;
  run.data = training::load_dataset(dir, 64);
  const ViskGatConfig mcfg = load_model_config(std::string(ERGORISK_CONFIG_DIR) + "/model_desk.json");
  const training::TrainConfig tcfg = training::load_train_config(std::string(ERGORISK_CONFIG_DIR) + "/train_overfit.json");
  std::vector<int> labels;
  for (const auto& s : run.data) labels.push_back(s.label);
  const auto split =
      training::stratified_split(labels, tcfg.train_fraction, tcfg.val_fraction, tcfg.test_fraction, tcfg.seed);

  std::string logs[2];
  double secs[2] = {0, 0};
  training::TrainResult result;
  for (int k = 0; k < 2; ++k) {
    const auto t0 = Clock::now();
    Model model(mcfg, tcfg.seed);
    result = training::train(model, tcfg, run.data, split);
    secs[k] = seconds_since(t0);
    logs[k] = training::log_csv(result.log);
    if (k == 1) {
      import_parameters(model, result.best_parameters);
      trained_model.emplace(std::move(model));
    }
  }
  const bool ok = split.train.size() == 64 && result.final_train_acc >= 0.99 && result.log.size() <= 300 &&
                  std::max(secs[0], secs[1]) < 900.0 && logs[0] == logs[1];
  run.verdict = {ok, "train acc " + num(result.final_train_acc) + " after " + std::to_string(result.log.size()) +
                         " epochs, " + num(secs[0]) + " s and " + num(secs[1]) + " s, logs " +
                         (logs[0] == logs[1] ? "identical" : "differ")};
  return run;
}

// ---------------------------------------------------------------------------

namespace metric_oracle {

struct Counts {
  double tp, tn, fp, fn;
};

Counts counts(const metrics::ConfusionMatrix& cm, std::size_t c) {
  Counts k{0, 0, 0, 0};
  for (std::size_t i = 0; i < cm.classes(); ++i)
    for (std::size_t j = 0; j < cm.classes(); ++j) {
      const double v = static_cast<double>(cm.at(i, j));
      if (i == c && j == c) k.tp += v;
      else if (i == c) k.fn += v;
      else if (j == c) k.fp += v;
      else k.tn += v;
    }
  return k;
}

double ratio(double a, double b) { return b == 0 ? 0.0 : a / b; }

// Expands the matrix into per-sample pairs.
std::vector<std::pair<std::size_t, std::size_t>> samples(const metrics::ConfusionMatrix& cm) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < cm.classes(); ++i)
    for (std::size_t j = 0; j < cm.classes(); ++j)
      for (std::uint64_t n = 0; n < cm.at(i, j); ++n) out.emplace_back(i, j);
  return out;
}

// Observed agreement over samples; chance agreement as the probability that
// an independently drawn truth and prediction coincide.
double kappa(const metrics::ConfusionMatrix& cm) {
  const auto s = samples(cm);
  const double n = static_cast<double>(s.size());
  double agree = 0.0;
  for (const auto& [t, p] : s) agree += t == p;
  const double po = agree / n;
  double pe = 0.0;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    double t = 0, p = 0;
    for (const auto& [a, b] : s) {
      t += a == k;
      p += b == k;
    }
    pe += (t / n) * (p / n);
  }
  return pe == 1.0 ? (po == 1.0 ? 1.0 : 0.0) : (po - pe) / (1.0 - pe);
}

// Pearson correlation of the one-hot truth and prediction indicator vectors.
double mcc(const metrics::ConfusionMatrix& cm) {
  const auto s = samples(cm);
  const std::size_t k = cm.classes();
  const double n = static_cast<double>(s.size());
  std::vector<double> xbar(k, 0.0), ybar(k, 0.0);
  for (const auto& [t, p] : s) {
    xbar[t] += 1.0 / n;
    ybar[p] += 1.0 / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (const auto& [t, p] : s)
    for (std::size_t c = 0; c < k; ++c) {
      const double x = (t == c) - xbar[c];
      const double y = (p == c) - ybar[c];
      sxy += x * y;
      sxx += x * x;
      syy += y * y;
    }
  return sxx == 0 || syy == 0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

double auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      pairs += 1;
      wins += scores[i] > scores[j] ? 1.0 : scores[i] == scores[j] ? 0.5 : 0.0;
    }
  }
  return pairs == 0 ? 0.5 : wins / pairs;
}

}  // namespace metric_oracle

Verdict metrics_equivalence() {
  Rng rng(8);
  double worst = 0.0;
  const auto track = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  for (int trial = 0; trial < 100; ++trial) {
    metrics::ConfusionMatrix cm(8);
    // Every 17th matrix has an empty truth row, exercising undefined ratios.
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        if (!(trial % 17 == 0 && i == 3)) cm.add(i, j, rng.below(i == j ? 30 : 6));
    for (std::size_t c = 0; c < 8; ++c) {
      const auto k = metric_oracle::counts(cm, c);
      const auto b = metrics::basic_metrics(metrics::one_vs_rest_counts(cm, c));
      const double prec = metric_oracle::ratio(k.tp, k.tp + k.fp);
      const double rec = metric_oracle::ratio(k.tp, k.tp + k.fn);
      track(b.precision, prec);
      track(b.recall, rec);
      track(b.f1, metric_oracle::ratio(2 * prec * rec, prec + rec));
      track(b.specificity, metric_oracle::ratio(k.tn, k.tn + k.fp));
      track(b.npv, metric_oracle::ratio(k.tn, k.tn + k.fn));
      track(b.fpr, metric_oracle::ratio(k.fp, k.fp + k.tn));
      track(b.fdr, metric_oracle::ratio(k.fp, k.fp + k.tp));
      track(b.fnr, metric_oracle::ratio(k.fn, k.fn + k.tp));
    }
    track(metrics::cohen_kappa(cm), metric_oracle::kappa(cm));
    track(metrics::mcc_multiclass(cm), metric_oracle::mcc(cm));
  }

  // Binary MCC on every 2x2 matrix with entries 0..6.
  std::size_t binary_mismatch = 0;
  for (std::uint64_t tp = 0; tp <= 6; ++tp)
    for (std::uint64_t fn = 0; fn <= 6; ++fn)
      for (std::uint64_t fp = 0; fp <= 6; ++fp)
        for (std::uint64_t tn = 0; tn <= 6; ++tn) {
          metrics::ConfusionMatrix cm(2);
          cm.add(0, 0, tp);
          cm.add(0, 1, fn);
          cm.add(1, 0, fp);
          cm.add(1, 1, tn);
          const double den = std::sqrt(double(tp + fp) * double(tp + fn) * double(tn + fp) * double(tn + fn));
          const double want = den == 0 ? 0.0 : (double(tp) * double(tn) - double(fp) * double(fn)) / den;
          if (std::abs(metrics::mcc_multiclass(cm) - want) > 1e-12) ++binary_mismatch;
        }

  // Probability errors and AUC.
  double worst_prob = 0.0, worst_auc = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 50 + rng.below(50);
    std::vector<double> probs(n * 8);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      double z = 0;
      for (std::size_t c = 0; c < 8; ++c) z += probs[i * 8 + c] = std::round(rng.uniform() * 20) + 0.5;
      for (std::size_t c = 0; c < 8; ++c) probs[i * 8 + c] /= z;
      labels[i] = static_cast<int>(rng.below(8));
    }
    double sq = 0, ab = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s2 = 0, s1 = 0;
      for (std::size_t c = 0; c < 8; ++c) {
        const double e = probs[i * 8 + c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0);
        s2 += e * e;
        s1 += std::abs(e);
      }
      sq += s2;
      ab += s1;
    }
    worst_prob = std::max(worst_prob, std::abs(metrics::prob_rmse(probs, labels) - std::sqrt(sq / n)));
    worst_prob = std::max(worst_prob, std::abs(metrics::prob_mae(probs, labels) - ab / n));
    for (std::size_t c = 0; c < 8; ++c) {
      std::vector<double> scores(n);
      std::vector<bool> pos(n);
      for (std::size_t i = 0; i < n; ++i) {
        scores[i] = probs[i * 8 + c];
        pos[i] = labels[i] == static_cast<int>(c);
      }
      worst_auc = std::max(worst_auc, std::abs(metrics::roc_auc_ovr(probs, labels, c) - metric_oracle::auc(scores, pos)));
    }
  }
  return {worst <= 1e-12 && binary_mismatch == 0 && worst_prob <= 1e-9 && worst_auc <= 1e-12,
          "matrix metrics " + num(worst) + ", 2x2 MCC mismatches " + std::to_string(binary_mismatch) + ", prob " +
              num(worst_prob) + ", AUC " + num(worst_auc)};
}

// ---------------------------------------------------------------------------

Verdict ablation(const std::vector<training::Sample>& data) {
  if (!trained_model) return {false, "no trained model"};
  ad::NoGradGuard no_grad;
  Rng rng(9);
  const Model& live = *trained_model;

  std::size_t changed = 0;
  double largest = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& s = data[i * 8];
    std::vector<float> moved(s.pose.data().begin(), s.pose.data().end());
    for (auto& v : moved) v = std::clamp(v + static_cast<float>(rng.uniform(-0.1, 0.1)), 0.0f, 1.0f);
    const auto a = live.forward(s.image, s.pose, {});
    const auto b = live.forward(s.image, Tensor<float>({33, 2}, moved), {});
    double diff = 0.0;
    for (std::size_t c = 0; c < a.numel(); ++c) diff = std::max(diff, double(std::abs(a[c] - b[c])));
    changed += diff > 0.0;
    largest = std::max(largest, diff);
  }

  // A fresh model holding the trained weights, with the value path cut.
  Model ablated(live.config(), 0);
  {
    Model& source = const_cast<Model&>(live);
    import_parameters(ablated, export_parameters(source));
  }
  ablated.zero_cross_attention_values();
  std::size_t identical = 0;
  const std::size_t trials = 8;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto& s = data[i * 8];
    ForwardTrace<float> base, other;
    ablated.forward(s.image, s.pose, {}, &base);
    ablated.forward(s.image, Tensor<float>::uniform({33, 2}, 0, 1, rng), {}, &other);
    const auto a = base.f_corr.data(), b = other.f_corr.data();
    identical += std::equal(a.begin(), a.end(), b.begin(), b.end());
  }
  return {changed == 8 && identical == trials,
          "zeroed values: F_corr bit-identical " + std::to_string(identical) + "/" + std::to_string(trials) +
              "; trained: logits moved " + std::to_string(changed) + "/8, largest " + num(largest)};
}

// ---------------------------------------------------------------------------

Verdict reproducibility(const std::filesystem::path& work, const std::filesystem::path& dataset) {
  if (!trained_model) return {false, "no trained model"};
  Model& model = *trained_model;
  std::string notes;
  bool ok = true;

  // Checkpoint round trip.
  const auto ckpt = work / "model.ckpt";
  save_model(model, ckpt);
  Model loaded = load_model(ckpt);
  const bool bytes_same =
      encode_checkpoint(export_parameters(model)) == encode_checkpoint(export_parameters(loaded)) &&
      testing::slurp(ckpt) == encode_checkpoint(export_parameters(loaded));
  bool logits_same = true;
  {
    ad::NoGradGuard no_grad;
    Rng rng(10);
    const std::size_t sz = model.config().image_size;
    for (int k = 0; k < 4; ++k) {
      const auto img = Tensor<float>::uniform({3, sz, sz}, 0, 1, rng);
      const auto pose = Tensor<float>::uniform({33, 2}, 0, 1, rng);
      const auto a = model.forward(img, pose, {});
      const auto b = loaded.forward(img, pose, {});
      logits_same = logits_same && std::ranges::equal(a.data(), b.data());
    }
  }
  ok = ok && bytes_same && logits_same;
  notes += std::string("checkpoint ") + (bytes_same && logits_same ? "bit-exact" : "differs");

  // Annotation through the command-line tool, twice with different thread counts.
  const std::string cli = ERGORISK_CLI_PATH;
  const auto input = dataset / "skeletons.jsonl";
  std::string outputs[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = work / ("labels" + std::to_string(k) + ".jsonl");
    const auto r = testing::run_command(cli + " --threads " + std::to_string(k == 0 ? 1 : 4) + " annotate --in " +
                                        input.string() + " --out " + out.string());
    outputs[k] = r.exit_code == 0 ? testing::slurp(out) : std::string("exit ") + std::to_string(r.exit_code);
  }
  const bool annotate_same = outputs[0] == outputs[1] && !outputs[0].empty() && outputs[0].rfind("exit ", 0) != 0;
  ok = ok && annotate_same;
  notes += std::string(", annotate ") + (annotate_same ? "byte-identical" : "differs");

  // Skeleton serialization round trip in both formats.
  const Rng root(11);
  std::vector<Skeleton> skeletons;
  for (std::size_t i = 0; i < 50; ++i) {
    Rng rng = root.split(i);
    Skeleton s;
    s.id = "s" + std::to_string(i);
    s.image_width = 1 + static_cast<int>(rng.below(4000));
    s.image_height = 1 + static_cast<int>(rng.below(4000));
    for (auto& slot : s.landmarks) {
      if (rng.below(5) == 0) continue;
      slot = Landmark{rng.uniform(), rng.uniform(), rng.uniform()};
    }
    skeletons.push_back(std::move(s));
  }
  std::size_t exact = 0;
  for (const auto fmt : {PoseFormat::jsonl, PoseFormat::csv}) {
    const auto path = work / (fmt == PoseFormat::jsonl ? "rt.jsonl" : "rt.csv");
    write_landmark_file(path, skeletons, fmt);
    exact += parse_landmark_file(path, fmt) == skeletons;
  }
  ok = ok && exact == 2;
  notes += ", landmark round trip " + std::to_string(exact) + "/2 formats exact";
  return {ok, notes};
}

}  // namespace

int main() {
  testing::TempDir work("acceptance");
  const auto dataset = work / "overfit";

  std::vector<std::pair<std::string, std::function<Verdict()>>> criteria;
  OverfitRun run;
  criteria.emplace_back("REBA scoring matches an independent implementation", reba_oracle);
  criteria.emplace_back("joint and inclination angles are exact and similarity invariant", geometry_exactness);
  criteria.emplace_back("analytic gradients match central differences", gradient_checks);
  criteria.emplace_back("attention rows, K/V permutation and layer norm moments", [] {
    const Model desk(ViskGatConfig::desk(), 0);
    return attention_norm_invariants(desk);
  });
  criteria.emplace_back("full-size configuration tensor shapes", full_size_shapes);
  criteria.emplace_back("loss and learning-rate anchors", loss_schedule_anchors);
  criteria.emplace_back("overfit 64 samples reproducibly", [&] {
    run = overfit(dataset);
    return run.verdict;
  });
  criteria.emplace_back("metrics match direct oracles", metrics_equivalence);
  criteria.emplace_back("pose path ablation", [&] { return ablation(run.data); });
  criteria.emplace_back("checkpoint, annotation and landmark round trips",
                        [&] { return reproducibility(work.path(), dataset); });

  std::size_t failures = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.passed;
    std::cout << (v.passed ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
