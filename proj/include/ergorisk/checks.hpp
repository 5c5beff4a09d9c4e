#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ergorisk/gradcheck.hpp"

namespace ergorisk::checks {

// Central-difference checks of every differentiable primitive plus the tiny
// model end to end, all in double precision. Each case draws its inputs from
// Rng(seed).split(case index).
std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options = {});

// Only the tiny-model case of the suite: smoothed cross-entropy of the
// eval-mode logits, differentiated with respect to every parameter, the
// image and the pose.
GradcheckResult gradcheck_tiny_model(std::uint64_t seed, const GradcheckOptions& options = {});

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Attention row sums, layer-norm moments, tiny-model gradient check and a
// walk of the REBA lookup path against arithmetic fixture tables.
std::vector<CheckLine> selftest(std::uint64_t seed);

}  // namespace ergorisk::checks
