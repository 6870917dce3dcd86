#pragma once

// Reproducible elementary functions for the noise path. Only IEEE-exact
// operations (+ - * /, frexp, ldexp) are used, so results do not depend on
// the platform libm.

#include <cmath>
#include <cstdint>
#include <random>

namespace fringe::portable {

inline constexpr double kLn2 = 0.693147180559945309417232121458;

/// Natural log for x > 0.
inline double log(double x) {
  int e = 0;
  double m = std::frexp(x, &e);  // x = m * 2^e, m in [0.5, 1)
  if (m < 0.70710678118654752440) {
    m *= 2.0;
    --e;
  }
  // ln(m) = 2 atanh(s), s = (m-1)/(m+1), |s| < 0.172
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  double term = s;
  double sum = 0.0;
  for (int k = 1; k <= 39; k += 2) {
    sum += term / k;
    term *= s2;
  }
  return 2.0 * sum + e * kLn2;
}

/// exp for moderate arguments (|x| < 700).
inline double exp(double x) {
  const double n = std::floor(x / kLn2 + 0.5);
  const double r = x - n * kLn2;  // |r| <= ln2/2
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k <= 20; ++k) {
    term *= r / k;
    sum += term;
  }
  return std::ldexp(sum, static_cast<int>(n));
}

/// Uniform double in (0, 1) from the raw 64-bit engine output; independent
/// of the standard library's distribution implementations.
inline double uniform_open(std::mt19937_64& rng) {
  const std::uint64_t bits = rng() >> 11;  // 53 bits
  return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_open(rng);
}

/// Unit-mean exponential variate.
inline double exponential(std::mt19937_64& rng) { return -log(uniform_open(rng)); }

}  // namespace fringe::portable
