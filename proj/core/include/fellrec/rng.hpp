#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fellrec {

// Seeded RNG with pinned sampling algorithms. std::mt19937_64 provides the
// bit stream; the distribution transforms are implemented here so that a
// given seed yields the same draws on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform index in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  // Standard normal via Box-Muller (second value cached).
  double normal();

  // Gamma(shape, 1) via Marsaglia-Tsang squeeze; shape > 0.
  double gamma(double shape);

  // Symmetric Dirichlet with concentration `conc` over k categories.
  std::vector<double> dirichlet(double conc, std::size_t k);

  // Draw from a discrete distribution given (unnormalized) nonnegative weights.
  std::size_t categorical(const std::vector<double>& weights);

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 gen_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace fellrec
