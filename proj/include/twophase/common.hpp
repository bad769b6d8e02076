#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace twophase {

using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;
using Eigen::VectorXi;

/// Thrown when an estimator is asked to run under a design it cannot
/// account for (e.g. ACML or MI under residual-dependent sampling).
struct DesignNotSupportedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when a fit cannot proceed because the information matrix (or a
/// profile Hessian) is not positive definite.
struct SingularInformationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Random number streams
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Mixes a master seed with up to three stream labels. Independent labels
/// give statistically independent substreams, so parallel work units can be
/// seeded reproducibly regardless of scheduling.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = seed;
  s ^= detail::splitmix64(a);
  s ^= detail::splitmix64(b);
  s ^= detail::splitmix64(c);
  detail::splitmix64(s);
  return detail::splitmix64(s);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0) {
  return Rng(mix_seed(seed, a, b, c));
}

inline double runif(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double rnorm(Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

// ---------------------------------------------------------------------------
// Numeric helpers
// ---------------------------------------------------------------------------

/// Inverse logit, stable for large |t| (never overflows).
inline double expit(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Empirical quantile as the ceil(q*N)-th order statistic of a sorted vector.
inline double empirical_quantile(const std::vector<double>& sorted, double q) {
  const auto n = static_cast<std::ptrdiff_t>(sorted.size());
  auto r = static_cast<std::ptrdiff_t>(std::ceil(q * static_cast<double>(n)));
  if (r < 1) r = 1;
  if (r > n) r = n;
  return sorted[static_cast<std::size_t>(r - 1)];
}

}  // namespace twophase
