#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ergorisk/rng.hpp"
#include "ergorisk/tensor.hpp"

namespace ergorisk {

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  // Lower bound on the relative-error denominator, so gradients that are
  // zero up to roundoff compare on an absolute scale.
  double denominator_floor = 1e-6;
  // 0 checks every coordinate.
  std::size_t coords_per_input = 0;
};

struct GradcheckResult {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Coordinates where the loss is not differentiable within +-step (the
  // one-sided slopes disagree), e.g. a ReLU input crossing zero.
  std::size_t skipped_kinks = 0;
  // Re-measurements at step/10 and step/100 after a miss at the base step.
  std::size_t refined = 0;
  bool passed = false;
};

// Compares analytic gradients of `loss` with central finite differences
// on each input. `loss` must rebuild its graph from the current input
// values on every call and be deterministic.
GradcheckResult gradcheck(const std::string& name, const std::function<ad::Tensor<double>()>& loss,
                          std::vector<ad::Tensor<double>> inputs, Rng& rng, const GradcheckOptions& options = {});

}  // namespace ergorisk
