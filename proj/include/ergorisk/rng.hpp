#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace ergorisk {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seeded pseudorandom source. The engine is mt19937_64, whose output
// sequence is fixed by the C++ standard; all conversions to floating point
// and bounded integers are done here rather than through <random>
// distributions, which differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t below(std::size_t n);

  // Standard normal via Box-Muller.
  double normal();

  // Independent stream derived from this generator's seed and `stream`.
  // Does not advance this generator.
  Rng split(std::uint64_t stream) const;

  template <typename Item>
  void shuffle(std::vector<Item>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace ergorisk
