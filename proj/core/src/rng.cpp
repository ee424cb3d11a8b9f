#include "fellrec/rng.hpp"

#include <cmath>

#include "fellrec/errors.hpp"

namespace fellrec {

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ContractViolation("Rng::index: n must be positive");
  // Lemire's multiply-shift; bias is negligible for desk-scale n.
  const unsigned __int128 wide = static_cast<unsigned __int128>(gen_()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  cached_normal_ = radius * std::sin(angle);
  has_cached_normal_ = true;
  return radius * std::cos(angle);
}

double Rng::gamma(double shape) {
  if (shape <= 0.0) throw ContractViolation("Rng::gamma: shape must be positive");
  if (shape < 1.0) {
    // Boost: Gamma(a) = Gamma(a+1) * U^(1/a)
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> Rng::dirichlet(double conc, std::size_t k) {
  if (conc <= 0.0) throw ContractViolation("Rng::dirichlet: concentration must be positive");
  std::vector<double> draws(k);
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    draws[i] = gamma(conc);
    total += draws[i];
  }
  if (total <= 0.0) {
    // All gamma draws underflowed (tiny concentration); fall back to a point mass.
    draws.assign(k, 0.0);
    draws[index(k)] = 1.0;
    return draws;
  }
  for (double& v : draws) v /= total;
  return draws;
}

std::size_t Rng::categorical(const std::vector<double>& weights) {
  if (weights.empty()) throw ContractViolation("Rng::categorical: empty weights");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ContractViolation("Rng::categorical: negative weight");
    total += w;
  }
  if (total <= 0.0) throw ContractViolation("Rng::categorical: weights sum to zero");
  const double target = uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (target < acc) return i;
  }
  return weights.size() - 1;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = index(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace fellrec
