#pragma once

// Numerical primitives shared by the rest of the library: a PSD Cholesky
// factorization, normal and noncentral chi-square(1) quantiles, and seeded
// random streams that are reproducible per (master seed, stream id).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "psprop/error.hpp"

namespace psprop {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kSymmetryTolerance = 1e-10;

inline double sigmoid(double eta) {
  if (eta >= 0.0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

// ---------------------------------------------------------------------------
// Cholesky

/// Lower-triangular L with L * L^T = sigma for symmetric positive
/// semi-definite input. Zero pivots yield zero columns, so a zero matrix
/// factors to a zero matrix.
inline Matrix cholesky_factor(const Matrix& sigma) {
  const Eigen::Index n = sigma.rows();
  if (sigma.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "cholesky_factor needs a square matrix");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::abs(sigma(i, j) - sigma(j, i)) > kSymmetryTolerance) {
        throw Error(ErrorCode::AsymmetricInput,
                    "entries (" + std::to_string(i) + "," + std::to_string(j) + ") differ");
      }
    }
  }

  double scale = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) scale = std::max(scale, std::abs(sigma(i, i)));
  const double zero_pivot = 1e-10 * std::max(scale, 1e-300);

  Matrix lower = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = sigma(j, j);
    for (Eigen::Index k = 0; k < j; ++k) pivot -= lower(j, k) * lower(j, k);
    if (pivot < -zero_pivot) {
      throw Error(ErrorCode::NotPositiveDefinite,
                  "pivot " + std::to_string(pivot) + " at column " + std::to_string(j));
    }
    if (pivot <= zero_pivot) {
      // Semi-definite direction: the rest of the column must vanish too.
      for (Eigen::Index i = j + 1; i < n; ++i) {
        double r = sigma(i, j);
        for (Eigen::Index k = 0; k < j; ++k) r -= lower(i, k) * lower(j, k);
        if (std::abs(r) > 1e-6 * scale) {
          throw Error(ErrorCode::NotPositiveDefinite,
                      "zero pivot with nonzero off-diagonal at column " + std::to_string(j));
        }
      }
      continue;
    }
    const double d = std::sqrt(pivot);
    lower(j, j) = d;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double r = sigma(i, j);
      for (Eigen::Index k = 0; k < j; ++k) r -= lower(i, k) * lower(j, k);
      lower(i, j) = r / d;
    }
  }
  return lower;
}

// ---------------------------------------------------------------------------
// Normal distribution

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

namespace detail {

// Solves 0.5 * erfc(x / sqrt2) = tail for x >= 0 by bisection.
inline double upper_tail_point(double tail) {
  double lo = 0.0;
  double hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(mid / std::numbers::sqrt2) > tail) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Quantile of N(0,1); antisymmetric about 0.5 by construction.
inline double std_normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "normal quantile needs 0 < q < 1, got " + std::to_string(q));
  }
  if (q == 0.5) return 0.0;
  if (q > 0.5) return detail::upper_tail_point(1.0 - q);
  return -detail::upper_tail_point(q);
}

// ---------------------------------------------------------------------------
// Noncentral chi-square with one degree of freedom

/// P(chi2_1(lambda) <= x) as a Poisson(lambda/2) mixture of central
/// chi2_{1+2j} CDFs, truncated once a term drops below 1e-14 past the mode.
inline double noncentral_chisq1_cdf(double x, double lambda) {
  if (lambda < 0.0) throw Error(ErrorCode::OutOfRange, "noncentrality must be nonnegative");
  if (x <= 0.0) return 0.0;
  const double y = 0.5 * x;
  const double half_lambda = 0.5 * lambda;

  // Central CDF P(1/2 + j, y) by upward recursion
  // P(a + 1, y) = P(a, y) - y^a e^{-y} / Gamma(a + 1), starting at erf(sqrt(y)).
  double central = std::erf(std::sqrt(y));
  double a = 0.5;
  double log_y = std::log(y);

  double total = 0.0;
  const int mode = static_cast<int>(half_lambda);
  for (int j = 0; j < 100000; ++j) {
    const double log_weight = (lambda == 0.0)
                                  ? (j == 0 ? 0.0 : -std::numeric_limits<double>::infinity())
                                  : -half_lambda + j * std::log(half_lambda) - std::lgamma(j + 1.0);
    const double term = std::exp(log_weight) * std::max(central, 0.0);
    total += term;
    if (j > mode && (term < 1e-14 || central <= 0.0)) break;
    if (lambda == 0.0) break;
    central -= std::exp(a * log_y - y - std::lgamma(a + 1.0));
    a += 1.0;
  }
  return std::min(total, 1.0);
}

/// Inverse of noncentral_chisq1_cdf in x by bisection.
inline double noncentral_chisq1_quantile(double q, double lambda) {
  if (!(q > 0.0 && q < 1.0)) {
    throw Error(ErrorCode::OutOfRange, "chi-square quantile needs 0 < q < 1");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::OutOfRange, "noncentrality must be finite and nonnegative");
  }
  double lo = 0.0;
  double hi = std::max(1.0, 2.0 * (1.0 + lambda));
  while (noncentral_chisq1_cdf(hi, lambda) < q) {
    lo = hi;
    hi *= 2.0;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= 1e-10 * std::max(1.0, mid)) break;
    if (noncentral_chisq1_cdf(mid, lambda) < q) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Random streams

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t id) {
  return splitmix64(splitmix64(master) ^ splitmix64(id + 0x632be59bd9b4e019ULL));
}

}  // namespace detail

/// Deterministic random stream keyed by (master_seed, stream_id). The engine
/// state is derived by hashing both keys, so streams can be created in any
/// order or on any thread and still replay the same draws.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : master_seed_(master_seed),
        stream_id_(stream_id),
        engine_(detail::mix_seed(master_seed, stream_id)) {}

  std::uint64_t master_seed() const noexcept { return master_seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Independent stream for a nested task (run m, attempt a, ...).
  RngStream child(std::uint64_t key) const {
    return RngStream(master_seed_, detail::mix_seed(stream_id_, key));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1).
  double uniform01() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

  double standard_normal() {
    const double u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  int bernoulli(double p) { return uniform01() < p ? 1 : 0; }

  /// Laplace(0, scale) by inverse CDF; variance 2 * scale^2.
  double laplace(double scale) {
    const double u = uniform01() - 0.5;
    const double mag = -scale * std::log1p(-2.0 * std::abs(u));
    return u < 0.0 ? -mag : mag;
  }

  /// Uniform index in [0, n).
  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t master_seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
};

}  // namespace psprop
