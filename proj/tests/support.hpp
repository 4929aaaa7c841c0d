#pragma once

// Independent reference computations used as test oracles. Nothing here
// calls into the library's numeric routines.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

/// erf by its Maclaurin series (|x| <= 3) or continued fraction tail.
inline double erf_series(double x) {
  if (std::abs(x) > 5.0) return x > 0 ? 1.0 : -1.0;
  double term = x, sum = x;
  for (int n = 1; n < 400; ++n) {
    term *= -x * x / n;
    const double add = term / (2 * n + 1);
    sum += add;
    if (std::abs(add) < 1e-17 * std::abs(sum)) break;
  }
  return 2.0 / std::sqrt(M_PI) * sum;
}

inline double normal_cdf(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

inline double normal_quantile(double q) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (normal_cdf(mid) < q ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// P(X <= x) for X ~ noncentral chi-square(1, lambda): X = (Z + sqrt(lambda))^2.
inline double ncx2_1_cdf(double x, double lambda) {
  if (x <= 0) return 0.0;
  const double r = std::sqrt(x), m = std::sqrt(lambda);
  return 0.5 * std::erfc(-(r - m) / std::sqrt(2.0)) - 0.5 * std::erfc(-(-r - m) / std::sqrt(2.0));
}

/// Probability of assignment bits under independent Bernoulli(p).
inline double assignment_prob(std::uint64_t mask, const std::vector<double>& p) {
  double w = 1.0;
  for (std::size_t i = 0; i < p.size(); ++i) w *= (mask >> i) & 1U ? p[i] : 1.0 - p[i];
  return w;
}

inline std::vector<std::uint8_t> bits(std::uint64_t mask, std::size_t n) {
  std::vector<std::uint8_t> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = static_cast<std::uint8_t>((mask >> i) & 1U);
  return z;
}

/// E[f(Z)] and E[f(Z)^2] over all 2^N assignments.
inline std::pair<double, double> enumerate_moments(const std::vector<double>& p,
                                                   const std::function<double(const std::vector<std::uint8_t>&)>& f) {
  double m1 = 0.0, m2 = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << p.size()); ++mask) {
    const double w = assignment_prob(mask, p);
    if (w == 0.0) continue;
    const double v = f(bits(mask, p.size()));
    m1 += w * v;
    m2 += w * v * v;
  }
  return {m1, m2};
}

/// Central finite-difference gradient.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2 * h);
  }
  return g;
}

// Minimum of f over [lo, hi]^n: a three-level grid (corners, centre) followed
// by repeated fine coordinate scans from the best grid points.
inline double grid_refine_min(std::size_t n, double lo, double hi, const std::function<double(const std::vector<double>&)>& f) {
  const double levels[3] = {lo, 1.0, hi};
  std::vector<std::pair<double, std::vector<double>>> top;
  std::vector<double> t(n);
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= 3;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i, c /= 3) t[i] = levels[c % 3];
    const double v = f(t);
    top.emplace_back(v, t);
    if (top.size() > 64) {
      std::nth_element(top.begin(), top.begin() + 8, top.end(),
                       [](const auto& a, const auto& b) { return a.first < b.first; });
      top.resize(8);
    }
  }
  std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (top.size() > 8) top.resize(8);
  double best = std::numeric_limits<double>::infinity();
  for (auto& [v0, x] : top) {
    double v = v0;
    for (int sweep = 0; sweep < 30; ++sweep) {
      const double before = v;
      for (std::size_t i = 0; i < n; ++i) {
        double width = hi - lo, centre = x[i];
        for (int zoom = 0; zoom < 4; ++zoom) {
          const double a = std::max(lo, centre - width / 2), b = std::min(hi, centre + width / 2);
          for (int k = 0; k <= 100; ++k) {
            const double old = x[i];
            x[i] = a + (b - a) * k / 100.0;
            const double nv = f(x);
            if (nv < v) {
              v = nv;
              centre = x[i];
            } else {
              x[i] = old;
            }
          }
          width /= 20.0;
        }
      }
      if (before - v < 1e-13) break;
    }
    best = std::min(best, v);
  }
  return best;
}

}  // namespace oracle
