#include "ergorisk/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "ergorisk/model.hpp"
#include "ergorisk/reba.hpp"
#include "ergorisk/synth.hpp"
#include "ergorisk/text.hpp"

namespace ergorisk::checks {
namespace {

using ad::Tensor;
using T64 = Tensor<double>;

T64 randn(ad::Shape shape, Rng& rng, double stddev = 1.0) { return T64::normal(std::move(shape), stddev, rng); }

// Contracts an output with fixed random weights so that every output
// coordinate carries its own gradient.
T64 probe_loss(const T64& out, const T64& weights) { return ad::sum(ad::mul(out, weights)); }

struct Case {
  std::string name;
  std::function<GradcheckResult(Rng&, const GradcheckOptions&)> run;
};

// f(inputs) with a random contraction of its output.
template <typename F>
Case unary_case(std::string name, ad::Shape in, F f) {
  return {name, [name, in, f](Rng& rng, const GradcheckOptions& opts) {
            T64 x = randn(in, rng);
            const T64 probe = f(x);
            const T64 w = randn(probe.shape(), rng);
            return gradcheck(name, [&] { return probe_loss(f(x), w); }, {x}, rng, opts);
          }};
}

template <typename F>
Case binary_case(std::string name, ad::Shape a_shape, ad::Shape b_shape, F f) {
  return {name, [name, a_shape, b_shape, f](Rng& rng, const GradcheckOptions& opts) {
            T64 a = randn(a_shape, rng);
            T64 b = randn(b_shape, rng);
            const T64 probe = f(a, b);
            const T64 w = randn(probe.shape(), rng);
            return gradcheck(name, [&] { return probe_loss(f(a, b), w); }, {a, b}, rng, opts);
          }};
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cases;
  cases.push_back(binary_case("add", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ad::add(a, b); }));
  cases.push_back(binary_case("sub", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ad::sub(a, b); }));
  cases.push_back(binary_case("mul", {3, 4}, {3, 4}, [](const T64& a, const T64& b) { return ad::mul(a, b); }));
  cases.push_back(unary_case("scale", {3, 4}, [](const T64& x) { return ad::scale(x, 0.7); }));
  cases.push_back(
      binary_case("add_bias", {3, 4}, {4}, [](const T64& a, const T64& b) { return ad::add_bias(a, b); }));
  cases.push_back(binary_case("matmul", {3, 5}, {5, 4}, [](const T64& a, const T64& b) { return ad::matmul(a, b); }));
  cases.push_back(unary_case("transpose", {3, 5}, [](const T64& x) { return ad::transpose(x); }));
  cases.push_back(unary_case("reshape", {3, 4}, [](const T64& x) { return ad::reshape(x, {2, 6}); }));
  cases.push_back(
      binary_case("concat_cols", {3, 2}, {3, 4}, [](const T64& a, const T64& b) { return ad::concat_cols(a, b); }));
  cases.push_back(binary_case("stack_rows", {1, 4}, {1, 4}, [](const T64& a, const T64& b) {
    return ad::stack_rows(std::vector<T64>{a, b, a});
  }));
  cases.push_back(unary_case("mean_rows", {5, 3}, [](const T64& x) { return ad::mean_rows(x); }));
  cases.push_back(unary_case("sum", {3, 4}, [](const T64& x) { return ad::reshape(ad::sum(x), {1}); }));
  cases.push_back(unary_case("mean", {3, 4}, [](const T64& x) { return ad::reshape(ad::mean(x), {1}); }));
  cases.push_back(unary_case("relu", {4, 5}, [](const T64& x) { return ad::relu(x); }));
  cases.push_back(unary_case("gelu", {4, 5}, [](const T64& x) { return ad::gelu(x); }));
  cases.push_back({"dropout", [](Rng& rng, const GradcheckOptions& opts) {
                     T64 x = randn({4, 5}, rng);
                     const T64 w = randn({4, 5}, rng);
                     const Rng mask_rng = rng.split(99);
                     return gradcheck(
                         "dropout",
                         [&] {
                           Rng r = mask_rng;
                           return probe_loss(ad::dropout(x, 0.3, &r, true), w);
                         },
                         {x}, rng, opts);
                   }});
  cases.push_back(unary_case("softmax_rows", {3, 5}, [](const T64& x) { return ad::softmax(x, 1); }));
  cases.push_back(unary_case("softmax_cols", {3, 5}, [](const T64& x) { return ad::softmax(x, 0); }));
  cases.push_back({"layer_norm", [](Rng& rng, const GradcheckOptions& opts) {
                     T64 x = randn({4, 6}, rng);
                     T64 gamma = randn({6}, rng);
                     T64 beta = randn({6}, rng);
                     const T64 w = randn({4, 6}, rng);
                     return gradcheck(
                         "layer_norm", [&] { return probe_loss(ad::layer_norm(x, gamma, beta), w); },
                         {x, gamma, beta}, rng, opts);
                   }});
  cases.push_back({"conv2d", [](Rng& rng, const GradcheckOptions& opts) {
                     T64 x = randn({2, 5, 5}, rng);
                     T64 k = randn({3, 2, 3, 3}, rng);
                     T64 b = randn({3}, rng);
                     const T64 w = randn({3, 3, 3}, rng);
                     return gradcheck(
                         "conv2d", [&] { return probe_loss(ad::conv2d(x, k, b, 2, 1), w); }, {x, k, b}, rng, opts);
                   }});
  cases.push_back({"attention", [](Rng& rng, const GradcheckOptions& opts) {
                     T64 q = randn({3, 4}, rng);
                     T64 k = randn({5, 4}, rng);
                     T64 v = randn({5, 4}, rng);
                     const T64 w = randn({3, 4}, rng);
                     return gradcheck(
                         "attention", [&] { return probe_loss(ad::attention(q, k, v, 2), w); }, {q, k, v}, rng,
                         opts);
                   }});
  cases.push_back({"cross_entropy_smoothed", [](Rng& rng, const GradcheckOptions& opts) {
                     T64 logits = randn({3, 8}, rng);
                     const std::vector<int> labels = {0, 3, 7};
                     return gradcheck(
                         "cross_entropy_smoothed",
                         [&] { return ad::cross_entropy_smoothed(logits, std::span<const int>(labels), 0.1); },
                         {logits}, rng, opts);
                   }});
  return cases;
}

}  // namespace

GradcheckResult gradcheck_tiny_model(std::uint64_t seed, const GradcheckOptions& options) {
  Rng rng = Rng(seed).split(1000);
  ViskGat<double> model(ViskGatConfig::tiny(), seed);
  const std::size_t s = model.config().image_size;
  T64 image = T64::uniform({3, s, s}, 0.0, 1.0, rng);
  T64 pose = T64::uniform({kLandmarkCount, 2}, 0.0, 1.0, rng);
  const int label = static_cast<int>(rng.below(model.config().num_classes));
  std::vector<T64> inputs = model.parameters();
  inputs.push_back(image);
  inputs.push_back(pose);
  const nn::ForwardContext ctx;
  return gradcheck(
      "tiny_model",
      [&] {
        return ad::cross_entropy_smoothed(model.forward(image, pose, ctx), std::span<const int>(&label, 1), 0.1);
      },
      inputs, rng, options);
}

std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  const Rng root(seed);
  std::vector<GradcheckResult> out;
  const auto cases = primitive_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    Rng rng = root.split(i);
    out.push_back(cases[i].run(rng, options));
  }
  out.push_back(gradcheck_tiny_model(seed, options));
  return out;
}

std::vector<CheckLine> selftest(std::uint64_t seed) {
  std::vector<CheckLine> lines;
  const Rng root(seed);

  {
    ad::NoGradGuard no_grad;
    Model model(ViskGatConfig::tiny(), seed);
    Rng rng = root.split(1);
    const std::size_t s = model.config().image_size;
    const auto image = Tensor<float>::uniform({3, s, s}, 0.0, 1.0, rng);
    const auto pose = Tensor<float>::uniform({kLandmarkCount, 2}, 0.0, 1.0, rng);
    std::vector<ad::AttentionProbe> probes;
    nn::ForwardContext ctx;
    ctx.probes = &probes;
    (void)model.forward(image, pose, ctx);
    double worst = 0.0;
    for (const auto& p : probes) {
      for (std::size_t row = 0; row < p.heads * p.n_q; ++row) {
        double total = 0.0;
        for (std::size_t j = 0; j < p.n_k; ++j) total += p.probs[row * p.n_k + j];
        worst = std::max(worst, std::abs(total - 1.0));
      }
    }
    lines.push_back({"attention_row_sums", !probes.empty() && worst <= 1e-6,
                     std::to_string(probes.size()) + " maps, max |sum-1| " + text::format_double(worst)});
  }

  {
    ad::NoGradGuard no_grad;
    Rng rng = root.split(2);
    const std::size_t rows = 16;
    const std::size_t d = 64;
    const auto x = Tensor<double>::normal({rows, d}, 3.0, rng);
    const auto y = ad::layer_norm(x, Tensor<double>::ones({d}), Tensor<double>::zeros({d}));
    double worst_mean = 0.0;
    double worst_var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (std::size_t c = 0; c < d; ++c) mean += y[r * d + c];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t c = 0; c < d; ++c) var += (y[r * d + c] - mean) * (y[r * d + c] - mean);
      var /= static_cast<double>(d);
      worst_mean = std::max(worst_mean, std::abs(mean));
      worst_var = std::max(worst_var, std::abs(var - 1.0));
    }
    lines.push_back({"layer_norm_moments", worst_mean <= 1e-6 && worst_var <= 1e-5,
                     "max |mean| " + text::format_double(worst_mean) + ", max |var-1| " +
                         text::format_double(worst_var)});
  }

  {
    const GradcheckResult r = gradcheck_tiny_model(seed);
    lines.push_back({"tiny_model_gradcheck", r.passed,
                     "max rel err " + text::format_double(r.max_relative_error) + " over " +
                         std::to_string(r.checked) + " coords, " + std::to_string(r.refined) + " refined"});
  }

  {
    RebaConfig cfg = default_reba_config();
    auto& t = cfg.tables;
    for (int i = 1; i <= 5; ++i)
      for (int j = 1; j <= 3; ++j)
        for (int k = 1; k <= 4; ++k) t.table_a[i - 1][j - 1][k - 1] = std::min(i + j + k - 2, 9);
    for (int i = 1; i <= 6; ++i)
      for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 3; ++k) t.table_b[i - 1][j - 1][k - 1] = std::min(i + j + k - 2, 9);
    for (int i = 1; i <= 12; ++i)
      for (int j = 1; j <= 12; ++j) t.table_c[i - 1][j - 1] = std::min(i + j - 1, 12);
    std::size_t walked = 0;
    std::size_t mismatches = 0;
    for (int trunk = 1; trunk <= 5; ++trunk)
      for (int neck = 1; neck <= 3; ++neck)
        for (int legs = 1; legs <= 4; ++legs)
          for (int upper = 1; upper <= 6; ++upper)
            for (int lower = 1; lower <= 2; ++lower)
              for (int wrist = 1; wrist <= 3; ++wrist) {
                const int ga = group_a(trunk, neck, legs, t);
                const int gb = group_b(upper, lower, wrist, t);
                const int gc = group_c(ga, gb, t);
                const int want_a = std::min(trunk + neck + legs - 2, 9);
                const int want_b = std::min(upper + lower + wrist - 2, 9);
                const int want_c = std::min(want_a + want_b - 1, 12);
                ++walked;
                if (ga != want_a || gb != want_b || gc != want_c) ++mismatches;
              }
    const RebaResult upright = assess(synth::figure_to_skeleton(synth::neutral_figure()), default_reba_config());
    lines.push_back({"reba_fixture_walk", mismatches == 0 && upright.class_label == 1,
                     std::to_string(walked) + " combinations, " + std::to_string(mismatches) +
                         " mismatches, upright class " + std::to_string(upright.class_label)});
  }
  return lines;
}

}  // namespace ergorisk::checks
