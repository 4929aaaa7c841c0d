#pragma once

// Design-based point and variance estimators under a given propensity vector,
// and the Wald interval built from them.

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/interval.hpp"
#include "psprop/numkit.hpp"

namespace psprop {

struct EstimateWithVariance {
  double point = 0.0;
  std::vector<double> per_unit;  // empty when the estimator has no per-unit form
  double variance = 0.0;
  std::vector<std::string> warnings;
};

/// sum (v_i - mean)^2 / (N (N - 1)); zero for fewer than two terms.
inline double per_unit_variance(std::span<const double> per_unit) {
  const std::size_t n = per_unit.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(per_unit.begin(), per_unit.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : per_unit) ss += (v - mean) * (v - mean);
  return ss / (static_cast<double>(n) * static_cast<double>(n - 1));
}

namespace detail {

inline EstimateWithVariance from_per_unit(std::vector<double> per_unit) {
  EstimateWithVariance est;
  const double n = static_cast<double>(per_unit.size());
  est.point = per_unit.empty() ? 0.0 : std::accumulate(per_unit.begin(), per_unit.end(), 0.0) / n;
  est.variance = per_unit_variance(per_unit);
  if (per_unit.size() < 2) est.warnings.emplace_back("fewer than two units; variance set to 0");
  est.per_unit = std::move(per_unit);
  return est;
}

inline void require_interior(const PropensityVector& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] < 1.0)) {
      throw Error(ErrorCode::OutOfRange, "propensity at unit " + std::to_string(i) + " is not in (0, 1)");
    }
  }
}

inline std::vector<double> ipw_terms(std::span<const std::uint8_t> z, std::span<const double> y,
                                     const PropensityVector& p) {
  std::vector<double> terms(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    terms[i] = z[i] ? y[i] / p[i] : -y[i] / (1.0 - p[i]);
  }
  return terms;
}

}  // namespace detail

/// Inverse probability weighting estimate of the sample average treatment
/// effect with per-unit terms z y / p - (1 - z) y / (1 - p).
inline EstimateWithVariance ipw_estimate(const Dataset& ds, const PropensityVector& p) {
  ds.validate();
  check_length(ds, p);
  detail::require_interior(p);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "unit " + std::to_string(i) + " has no observed outcome");
    }
  }
  return detail::from_per_unit(detail::ipw_terms(ds.z, ds.y, p));
}

/// Horvitz-Thompson estimate of the finite-population mean with
/// variance (1/N^2) sum (1 - p) / p^2 z y^2.
inline EstimateWithVariance ht_estimate(const Dataset& ds, const PropensityVector& p) {
  ds.validate();
  check_length(ds, p);
  const std::size_t n = ds.size();
  if (n == 0) throw Error(ErrorCode::EmptyInput, "no units");
  EstimateWithVariance est;
  est.per_unit.assign(n, 0.0);
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ds.z[i]) continue;
    if (!ds.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "sampled unit " + std::to_string(i) + " has no outcome");
    }
    if (!(p[i] > 0.0)) {
      throw Error(ErrorCode::OutOfRange, "sampled unit " + std::to_string(i) + " has zero propensity");
    }
    est.per_unit[i] = ds.y[i] / p[i];
    var += (1.0 - p[i]) / (p[i] * p[i]) * ds.y[i] * ds.y[i];
  }
  const double nn = static_cast<double>(n);
  est.point = std::accumulate(est.per_unit.begin(), est.per_unit.end(), 0.0) / nn;
  est.variance = var / (nn * nn);
  return est;
}

/// Effect estimate for a Bernoulli(1/2) experiment whose outcomes are
/// missing at random: per-unit terms (2 / p) M (Z Y - (1 - Z) Y), where M is
/// the design bit (non-missingness) and Z the treatment bit.
inline EstimateWithVariance missing_outcome_estimate(const Dataset& ds, const PropensityVector& p_nonmiss) {
  ds.validate();
  check_length(ds, p_nonmiss);
  if (!ds.treat) throw Error(ErrorCode::InvalidArgument, "dataset carries no treatment bits");
  const auto& treat = *ds.treat;
  const std::size_t n = ds.size();
  std::vector<double> terms(n, 0.0);
  std::size_t present = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!ds.z[i]) continue;
    if (!ds.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "non-missing unit " + std::to_string(i) + " has no outcome");
    }
    if (!(p_nonmiss[i] > 0.0)) {
      throw Error(ErrorCode::OutOfRange, "unit " + std::to_string(i) + " has zero non-missingness propensity");
    }
    ++present;
    const double w = 2.0 / p_nonmiss[i];
    terms[i] = treat[i] ? w * ds.y[i] : -w * ds.y[i];
  }
  auto est = detail::from_per_unit(std::move(terms));
  if (present == 0) est.warnings.emplace_back("every outcome is missing; estimate carries no information");
  return est;
}

/// Weighted difference-in-differences: IPW applied to y - baseline.
inline EstimateWithVariance did_estimate(const Dataset& panel, const PropensityVector& p) {
  panel.validate();
  check_length(panel, p);
  if (!panel.baseline) throw Error(ErrorCode::InvalidArgument, "panel carries no baseline outcomes");
  detail::require_interior(p);
  std::vector<double> diff(panel.size());
  for (std::size_t i = 0; i < panel.size(); ++i) {
    if (!panel.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "unit " + std::to_string(i) + " lacks a post-period outcome");
    }
    diff[i] = panel.y[i] - (*panel.baseline)[i];
  }
  return detail::from_per_unit(detail::ipw_terms(panel.z, diff, p));
}

/// Covariate-adjusted variance (1/N^2) y' (I - H_Q) y with
/// y_i = v_i / sqrt(1 - h_ii) and H_Q the hat matrix of Q.
inline double covariate_adjusted_variance(std::span<const double> per_unit, const Matrix& q) {
  const auto n = static_cast<Eigen::Index>(per_unit.size());
  if (q.rows() != n) throw Error(ErrorCode::DimensionMismatch, "Q must have one row per unit");
  if (n <= q.cols()) throw Error(ErrorCode::RankDeficient, "Q needs fewer columns than units");

  Eigen::ColPivHouseholderQR<Matrix> qr(q);
  qr.setThreshold(1e-10);
  if (qr.rank() < q.cols()) throw Error(ErrorCode::RankDeficient, "Q is not of full column rank");
  const Matrix basis = qr.householderQ() * Matrix::Identity(n, q.cols());

  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = basis.row(i).squaredNorm();
    if (h >= 1.0 - 1e-8) {
      throw Error(ErrorCode::LeverageOne, "unit " + std::to_string(i) + " has leverage 1");
    }
    y(i) = per_unit[static_cast<std::size_t>(i)] / std::sqrt(1.0 - h);
  }
  const Vector resid = y - basis * (basis.transpose() * y);
  const double nn = static_cast<double>(n);
  return resid.squaredNorm() / (nn * nn);
}

/// [point - z sigma, point + z sigma] with z the 1 - alpha/2 normal quantile.
inline Interval wald_interval(const EstimateWithVariance& est, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 1)");
  const double half = std_normal_quantile(1.0 - alpha / 2.0) * std::sqrt(std::max(est.variance, 0.0));
  return {est.point - half, est.point + half};
}

}  // namespace psprop
