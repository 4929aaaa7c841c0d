#pragma once

// Union step: one design-based interval per regenerated propensity vector,
// merged into the reported confidence set.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "psprop/estimators.hpp"
#include "psprop/interval.hpp"
#include "psprop/regen.hpp"

namespace psprop {

enum class EstimatorKind { Ipw, HorvitzThompson, MissingOutcome, DifferenceInDifferences };

inline std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Ipw: return "ipw";
    case EstimatorKind::HorvitzThompson: return "ht";
    case EstimatorKind::MissingOutcome: return "missing";
    case EstimatorKind::DifferenceInDifferences: return "did";
  }
  return "unknown";
}

struct Unrestricted {};
struct Restricted {
  double alpha_prime = 0.01;
};
using UnionMode = std::variant<Unrestricted, Restricted>;

struct BasicVariance {};
struct CovariateAdjustedVariance {
  Matrix q;
};
using VarianceKind = std::variant<BasicVariance, CovariateAdjustedVariance>;

inline EstimateWithVariance estimate(const Dataset& ds, const PropensityVector& p, EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Ipw: return ipw_estimate(ds, p);
    case EstimatorKind::HorvitzThompson: return ht_estimate(ds, p);
    case EstimatorKind::MissingOutcome: return missing_outcome_estimate(ds, p);
    case EstimatorKind::DifferenceInDifferences: return did_estimate(ds, p);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown estimator");
}

/// Estimate plus the requested variance form. The covariate-adjusted form
/// needs per-unit terms whose mean is the estimate, so it is not defined for
/// the Horvitz-Thompson estimator.
inline EstimateWithVariance estimate(const Dataset& ds, const PropensityVector& p, EstimatorKind kind,
                                     const VarianceKind& variance) {
  auto est = estimate(ds, p, kind);
  if (const auto* adj = std::get_if<CovariateAdjustedVariance>(&variance)) {
    if (kind == EstimatorKind::HorvitzThompson) {
      throw Error(ErrorCode::InvalidArgument, "covariate-adjusted variance is defined for effect estimators only");
    }
    est.variance = covariate_adjusted_variance(est.per_unit, adj->q);
  }
  return est;
}

struct PropagatedSet {
  IntervalUnion confidence_set;
  std::vector<Interval> run_intervals;  // one per regeneration run, in run order
  std::vector<double> run_points;
  std::vector<std::size_t> used_runs;   // runs entering the union
  double level_alpha = 0.05;            // level each run interval was built at
  bool restricted_fallback = false;     // restricted set was empty
  std::vector<std::string> warnings;
};

/// Unrestricted: union over all runs at level alpha. Restricted: union over
/// runs passing the coefficient screen at level alpha - alpha'; an empty
/// screen falls back to the unrestricted union with a warning.
inline PropagatedSet propagate_ci(const Dataset& ds, const RegenOutput& regen, double alpha, const UnionMode& mode,
                                  EstimatorKind kind, const VarianceKind& variance = BasicVariance{}) {
  if (regen.runs() == 0) throw Error(ErrorCode::EmptyInput, "no regeneration runs");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 1)");

  PropagatedSet out;
  out.level_alpha = alpha;
  std::vector<std::size_t> runs(regen.runs());
  for (std::size_t m = 0; m < runs.size(); ++m) runs[m] = m;

  if (const auto* r = std::get_if<Restricted>(&mode)) {
    if (!regen.source_fit || regen.coefficient_draws.size() != regen.runs()) {
      throw Error(ErrorCode::InvalidArgument, "restricted union needs parametric regeneration output");
    }
    if (!(r->alpha_prime > 0.0 && r->alpha_prime < alpha)) {
      throw Error(ErrorCode::OutOfRange, "alpha_prime must lie in (0, alpha)");
    }
    auto kept = restricted_indices(regen.coefficient_draws, *regen.source_fit, r->alpha_prime);
    if (kept.empty()) {
      out.restricted_fallback = true;
      out.warnings.emplace_back("restricted run set is empty; reporting the unrestricted union");
    } else {
      runs = std::move(kept);
      out.level_alpha = alpha - r->alpha_prime;
    }
  }

  out.run_intervals.resize(regen.runs());
  out.run_points.resize(regen.runs());
  for (std::size_t m = 0; m < regen.runs(); ++m) {
    const auto est = estimate(ds, regen.propensity_vectors[m], kind, variance);
    out.run_intervals[m] = wald_interval(est, out.level_alpha);
    out.run_points[m] = est.point;
  }
  std::vector<Interval> chosen;
  chosen.reserve(runs.size());
  for (auto m : runs) chosen.push_back(out.run_intervals[m]);
  out.confidence_set = union_intervals(chosen);
  out.used_runs = std::move(runs);
  return out;
}

}  // namespace psprop
