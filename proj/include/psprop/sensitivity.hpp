#pragma once

// Sensitivity analysis under the marginal sensitivity model: per-unit tilts
// t_i in [1/Gamma, Gamma] shift the estimated propensity odds, and the
// reported set is the union over runs of the range of tilted Wald intervals.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/estimators.hpp"
#include "psprop/interval.hpp"
#include "psprop/numkit.hpp"
#include "psprop/parallel.hpp"
#include "psprop/regen.hpp"

namespace psprop {

struct SensitivityConfig {
  double gamma = 1.0;
  double alpha = 0.05;
  double tau0 = 0.0;
  std::size_t restarts = 16;
  std::size_t max_iterations = 500;
  double step_tolerance = 1e-10;
  double kkt_tolerance = 1e-6;
  std::size_t corner_oracle_limit = 12;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw Error(ErrorCode::OutOfRange, "gamma must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 1)");
    if (!std::isfinite(tau0)) throw Error(ErrorCode::OutOfRange, "tau0 must be finite");
    if (restarts < 1) throw Error(ErrorCode::InvalidArgument, "need at least one restart");
    if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "need at least one iteration");
    if (!(step_tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "step tolerance must be positive");
  }
};

class TiltVector {
 public:
  TiltVector(std::vector<double> t, double gamma) : t_(std::move(t)), gamma_(gamma) {
    if (!(gamma >= 1.0)) throw Error(ErrorCode::OutOfRange, "gamma must be >= 1");
    const double lo = 1.0 / gamma;
    for (std::size_t i = 0; i < t_.size(); ++i) {
      if (!(t_[i] >= lo * (1.0 - 1e-12) && t_[i] <= gamma * (1.0 + 1e-12))) {
        throw Error(ErrorCode::OutOfRange, "tilt at unit " + std::to_string(i) + " is outside [1/gamma, gamma]");
      }
    }
  }

  static TiltVector ones(std::size_t n) { return TiltVector(std::vector<double>(n, 1.0), 1.0); }

  std::size_t size() const noexcept { return t_.size(); }
  double operator[](std::size_t i) const { return t_[i]; }
  std::span<const double> values() const noexcept { return t_; }
  double gamma() const noexcept { return gamma_; }

 private:
  std::vector<double> t_;
  double gamma_;
};

namespace detail {

// tau_i(t) = a_i + b_i t_i.
struct TiltTerms {
  std::vector<double> a, b;
};

inline TiltTerms tilt_terms(const Dataset& ds, std::span<const double> g_hat) {
  ds.validate();
  if (g_hat.size() != ds.size()) {
    throw Error(ErrorCode::DimensionMismatch, "logit-propensity vector length " + std::to_string(g_hat.size()) +
                                                  " != " + std::to_string(ds.size()));
  }
  TiltTerms terms;
  terms.a.resize(ds.size());
  terms.b.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!ds.is_observed(i)) {
      throw Error(ErrorCode::MissingOutcome, "unit " + std::to_string(i) + " has no observed outcome");
    }
    if (!std::isfinite(g_hat[i])) throw Error(ErrorCode::OutOfRange, "non-finite logit propensity");
    const double y = ds.y[i];
    if (ds.z[i]) {
      terms.a[i] = y;
      terms.b[i] = y * std::exp(-g_hat[i]);
    } else {
      terms.a[i] = -y;
      terms.b[i] = -y * std::exp(g_hat[i]);
    }
  }
  return terms;
}

enum class TiltObjective { Lower, NegatedUpper, Membership };

// Objectives depend on t only through S1 = sum tau_i and S2 = sum tau_i^2,
// which makes single-coordinate moves O(1).
class TiltProblem {
 public:
  TiltProblem(const TiltTerms& terms, double z, double lo, double hi, TiltObjective objective, double tau0)
      : a_(terms.a), b_(terms.b), n_(static_cast<double>(terms.a.size())), z_(z), lo_(lo), hi_(hi),
        objective_(objective), tau0_(tau0) {}

  std::size_t size() const noexcept { return a_.size(); }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double tau(std::size_t i, double t) const { return a_[i] + b_[i] * t; }

  void sums(std::span<const double> t, double& s1, double& s2) const {
    s1 = s2 = 0.0;
    for (std::size_t i = 0; i < a_.size(); ++i) {
      const double v = tau(i, t[i]);
      s1 += v;
      s2 += v * v;
    }
  }

  double variance(double s1, double s2) const {
    if (n_ < 2.0) return 0.0;
    return std::max(s2 - s1 * s1 / n_, 0.0) / (n_ * (n_ - 1.0));
  }

  double value(double s1, double s2) const {
    const double mean = s1 / n_;
    const double v = variance(s1, s2);
    switch (objective_) {
      case TiltObjective::Lower: return mean - z_ * std::sqrt(v);
      case TiltObjective::NegatedUpper: return -mean - z_ * std::sqrt(v);
      case TiltObjective::Membership: return (mean - tau0_) * (mean - tau0_) - z_ * z_ * v;
    }
    return 0.0;
  }

  double value(std::span<const double> t) const {
    double s1, s2;
    sums(t, s1, s2);
    return value(s1, s2);
  }

  // df/dS1 and df/dS2.
  void partials(double s1, double s2, double& f1, double& f2) const {
    const double mean = s1 / n_;
    const double scale = n_ < 2.0 ? 0.0 : 1.0 / (n_ * (n_ - 1.0));
    const double v = variance(s1, s2);
    // dv/dS1 = -2 S1 / N * scale, dv/dS2 = scale
    const double v1 = -2.0 * s1 / n_ * scale;
    const double v2 = scale;
    switch (objective_) {
      case TiltObjective::Lower:
      case TiltObjective::NegatedUpper: {
        const double sign = objective_ == TiltObjective::Lower ? 1.0 : -1.0;
        const double ds = v > 0.0 ? 0.5 / std::sqrt(v) : 0.0;
        f1 = sign / n_ - z_ * ds * v1;
        f2 = -z_ * ds * v2;
        return;
      }
      case TiltObjective::Membership:
        f1 = 2.0 * (mean - tau0_) / n_ - z_ * z_ * v1;
        f2 = -z_ * z_ * v2;
        return;
    }
  }

  void gradient(std::span<const double> t, std::vector<double>& g) const {
    double s1, s2, f1, f2;
    sums(t, s1, s2);
    partials(s1, s2, f1, f2);
    g.resize(a_.size());
    for (std::size_t i = 0; i < a_.size(); ++i) g[i] = (f1 + 2.0 * f2 * tau(i, t[i])) * b_[i];
  }

  /// Norm of the projected gradient: interior components count fully, bound
  /// components only when they point into the box.
  double kkt_residual(std::span<const double> t) const {
    std::vector<double> g;
    gradient(t, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double c = g[i];
      if (t[i] <= lo_) c = std::min(c, 0.0);
      if (t[i] >= hi_) c = std::max(c, 0.0);
      acc += c * c;
    }
    return std::sqrt(acc);
  }

  /// Projected gradient descent with Armijo backtracking.
  void descend(std::vector<double>& t, std::size_t max_iterations, double step_tolerance) const {
    std::vector<double> g, trial(t.size());
    double fx = value(t);
    double step = 0.0;
    for (std::size_t it = 0; it < max_iterations; ++it) {
      gradient(t, g);
      const double gmax = std::abs(*std::max_element(g.begin(), g.end(), [](double x, double y) {
        return std::abs(x) < std::abs(y);
      }));
      if (gmax == 0.0) return;
      if (step == 0.0) step = (hi_ - lo_) / gmax;
      bool accepted = false;
      for (int k = 0; k < 60; ++k) {
        double dot = 0.0, move = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i) {
          trial[i] = std::clamp(t[i] - step * g[i], lo_, hi_);
          const double d = trial[i] - t[i];
          dot += g[i] * d;
          move = std::max(move, std::abs(d));
        }
        if (move < step_tolerance) return;
        const double ft = value(trial);
        if (ft <= fx + 1e-4 * dot) {
          t.swap(trial);
          fx = ft;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) return;
      step *= 2.0;
    }
  }

  /// Exact single-coordinate minimization sweeps. Returns the final value.
  double polish(std::vector<double>& t, std::size_t max_sweeps = 200) const {
    double s1, s2;
    sums(t, s1, s2);
    double fx = value(s1, s2);
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
      bool moved = false;
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (b_[i] == 0.0) continue;
        const double old = tau(i, t[i]);
        const double r1 = s1 - old, r2 = s2 - old * old;
        double best_t = t[i], best_f = fx;
        auto consider = [&](double cand) {
          const double u = tau(i, cand);
          const double f = value(r1 + u, r2 + u * u);
          if (f < best_f - 1e-15 * (1.0 + std::abs(best_f))) {
            best_f = f;
            best_t = cand;
          }
        };
        consider(lo_);
        consider(hi_);
        if (objective_ == TiltObjective::Membership) {
          // d(u) is quadratic in u = tau_i with leading coefficient
          // (1 - z^2)/N^2; it has an interior minimizer only when positive.
          const double scale = n_ < 2.0 ? 0.0 : 1.0 / (n_ * (n_ - 1.0));
          const double qa = 1.0 / (n_ * n_) - z_ * z_ * scale * (1.0 - 1.0 / n_);
          if (qa > 0.0) {
            const double qb = 2.0 * (r1 / n_ - tau0_) / n_ + z_ * z_ * scale * 2.0 * r1 / n_;
            const double u = -qb / (2.0 * qa);
            const double cand = (u - a_[i]) / b_[i];
            if (cand > lo_ && cand < hi_) consider(cand);
          }
        }
        if (best_t != t[i]) {
          const double u = tau(i, best_t);
          t[i] = best_t;
          s1 = r1 + u;
          s2 = r2 + u * u;
          fx = best_f;
          moved = true;
        }
      }
      if (!moved) break;
      sums(t, s1, s2);  // shed accumulated rounding
      fx = value(s1, s2);
    }
    return fx;
  }

  bool concave_coordinates() const {
    return objective_ != TiltObjective::Membership || z_ * z_ >= 1.0;
  }

 private:
  const std::vector<double>& a_;
  const std::vector<double>& b_;
  double n_, z_, lo_, hi_;
  TiltObjective objective_;
  double tau0_;
};

}  // namespace detail

struct OptimizerResult {
  double value = 0.0;
  std::vector<double> t;
  double kkt_residual = 0.0;
  std::size_t restarts = 0;
  std::size_t converged_restarts = 0;
  bool corners_enumerated = false;
};

namespace detail {

inline OptimizerResult minimize_tilt(const TiltProblem& prob, const TiltTerms& terms, const SensitivityConfig& cfg,
                                     RngStream stream, bool prefer_low_mean) {
  const std::size_t n = prob.size();
  const double lo = prob.lo(), hi = prob.hi();
  std::vector<std::vector<double>> starts;
  starts.emplace_back(n, lo);
  starts.emplace_back(n, hi);
  starts.emplace_back(n, std::clamp(1.0, lo, hi));
  {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = (terms.b[i] > 0.0) == prefer_low_mean ? lo : hi;
    starts.push_back(std::move(s));
  }
  while (starts.size() < cfg.restarts) {
    std::vector<double> s(n);
    const bool corner = starts.size() % 2 == 0;
    for (auto& v : s) v = corner ? (stream.uniform01() < 0.5 ? lo : hi) : lo + (hi - lo) * stream.uniform01();
    starts.push_back(std::move(s));
  }
  starts.resize(cfg.restarts);

  OptimizerResult best;
  best.value = std::numeric_limits<double>::infinity();
  best.restarts = starts.size();
  auto offer = [&](std::vector<double> t, double f) {
    const double kkt = prob.kkt_residual(t);
    const bool ok = kkt <= cfg.kkt_tolerance;
    if (ok) ++best.converged_restarts;
    if (ok && f < best.value) {
      best.value = f;
      best.kkt_residual = kkt;
      best.t = std::move(t);
    }
  };
  for (auto& s : starts) {
    prob.descend(s, cfg.max_iterations, cfg.step_tolerance);
    const double f = prob.polish(s);
    offer(std::move(s), f);
  }
  if (n <= cfg.corner_oracle_limit) {
    std::vector<double> t(n);
    std::vector<double> arg;
    double fbest = std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      for (std::size_t i = 0; i < n; ++i) t[i] = (mask >> i) & 1U ? hi : lo;
      const double f = prob.value(t);
      if (f < fbest) {
        fbest = f;
        arg = t;
      }
    }
    if (!prob.concave_coordinates()) {
      prob.descend(arg, cfg.max_iterations, cfg.step_tolerance);
      fbest = prob.polish(arg);
    }
    best.corners_enumerated = true;
    offer(std::move(arg), fbest);
  }
  if (best.converged_restarts == 0) {
    throw Error(ErrorCode::OptimizerFailure, "no restart reached a first-order point");
  }
  return best;
}

inline double wald_z(double alpha) { return std_normal_quantile(1.0 - alpha / 2.0); }

}  // namespace detail

/// Tilted IPW estimate: per-unit terms z y (1 + t e^{-g}) - (1 - z) y (1 + t e^{g})
/// with the sample variance form.
inline EstimateWithVariance shifted_estimate(const Dataset& ds, std::span<const double> g_hat, const TiltVector& t) {
  const auto terms = detail::tilt_terms(ds, g_hat);
  if (t.size() != ds.size()) {
    throw Error(ErrorCode::DimensionMismatch, "tilt vector length does not match the dataset");
  }
  std::vector<double> per_unit(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) per_unit[i] = terms.a[i] + terms.b[i] * t[i];
  return detail::from_per_unit(std::move(per_unit));
}

struct SensitivityInterval {
  Interval interval;
  Interval wald_at_one;  // the Gamma = 1 interval
  OptimizerResult lower, upper;
};

/// [min_t tau_t - z sigma_t, max_t tau_t + z sigma_t] over the tilt box.
/// Endpoints are recomputed from the optimal tilts with the two-pass variance.
inline SensitivityInterval sensitivity_interval(const Dataset& ds, std::span<const double> g_hat,
                                                const SensitivityConfig& cfg, std::uint64_t stream_id = 0) {
  cfg.validate();
  const auto terms = detail::tilt_terms(ds, g_hat);
  const std::size_t n = ds.size();
  SensitivityInterval out;
  out.wald_at_one = wald_interval(shifted_estimate(ds, g_hat, TiltVector::ones(n)), cfg.alpha);
  if (cfg.gamma == 1.0) {
    out.interval = out.wald_at_one;
    out.lower.t = out.upper.t = std::vector<double>(n, 1.0);
    out.lower.value = out.interval.lo;
    out.upper.value = -out.interval.hi;
    return out;
  }
  const double z = detail::wald_z(cfg.alpha);
  const double lo = 1.0 / cfg.gamma, hi = cfg.gamma;
  RngStream stream(cfg.seed, stream_id);
  detail::TiltProblem lower(terms, z, lo, hi, detail::TiltObjective::Lower, 0.0);
  detail::TiltProblem upper(terms, z, lo, hi, detail::TiltObjective::NegatedUpper, 0.0);
  out.lower = detail::minimize_tilt(lower, terms, cfg, stream.child(1), true);
  out.upper = detail::minimize_tilt(upper, terms, cfg, stream.child(2), false);
  const auto lo_est = shifted_estimate(ds, g_hat, TiltVector(out.lower.t, cfg.gamma));
  const auto hi_est = shifted_estimate(ds, g_hat, TiltVector(out.upper.t, cfg.gamma));
  out.interval = {lo_est.point - z * std::sqrt(lo_est.variance), hi_est.point + z * std::sqrt(hi_est.variance)};
  return out;
}

/// Union over runs of the per-run sensitivity intervals.
inline IntervalUnion sensitivity_set(const Dataset& ds, const std::vector<std::vector<double>>& regen_g,
                                     const SensitivityConfig& cfg) {
  if (regen_g.empty()) throw Error(ErrorCode::EmptyInput, "no regeneration runs");
  std::vector<Interval> parts(regen_g.size());
  parallel_for(regen_g.size(), cfg.threads,
               [&](std::size_t m) { parts[m] = sensitivity_interval(ds, regen_g[m], cfg, m).interval; });
  return union_intervals(parts);
}

struct MembershipResult {
  bool member = false;
  std::vector<double> d_star;  // per-run optimal values
  std::vector<OptimizerResult> optima;
};

inline constexpr double kMembershipSlack = 1e-10;

/// tau0 is in the sensitivity set iff some run's box-constrained minimum of
/// (tau_t - tau0)^2 - z^2 sigma_t^2 is negative.
inline MembershipResult test_tau0(const Dataset& ds, const std::vector<std::vector<double>>& regen_g,
                                  const SensitivityConfig& cfg) {
  cfg.validate();
  if (regen_g.empty()) throw Error(ErrorCode::EmptyInput, "no regeneration runs");
  const double z = detail::wald_z(cfg.alpha);
  MembershipResult out;
  out.d_star.resize(regen_g.size());
  out.optima.resize(regen_g.size());
  parallel_for(regen_g.size(), cfg.threads, [&](std::size_t m) {
    const auto terms = detail::tilt_terms(ds, regen_g[m]);
    if (cfg.gamma == 1.0) {
      const auto est = shifted_estimate(ds, regen_g[m], TiltVector::ones(ds.size()));
      OptimizerResult r;
      r.t.assign(ds.size(), 1.0);
      r.value = (est.point - cfg.tau0) * (est.point - cfg.tau0) - z * z * est.variance;
      out.d_star[m] = r.value;
      out.optima[m] = std::move(r);
      return;
    }
    detail::TiltProblem prob(terms, z, 1.0 / cfg.gamma, cfg.gamma, detail::TiltObjective::Membership, cfg.tau0);
    // Pull the mean toward tau0 in the structured start.
    const double mean_at_one = [&] {
      double s = 0.0;
      for (std::size_t i = 0; i < terms.a.size(); ++i) s += terms.a[i] + terms.b[i];
      return s / static_cast<double>(terms.a.size());
    }();
    auto r = detail::minimize_tilt(prob, terms, cfg, RngStream(cfg.seed, m).child(3), mean_at_one > cfg.tau0);
    out.d_star[m] = r.value;
    out.optima[m] = std::move(r);
  });
  out.member = std::any_of(out.d_star.begin(), out.d_star.end(), [](double d) { return d < -kMembershipSlack; });
  return out;
}

struct SensitivityValueOptions {
  double gamma_max = 20.0;
  double tolerance = 1e-3;
};

struct SensitivityValue {
  double gamma_star = 1.0;
  bool capped = false;  // tau0 stayed outside the set up to gamma_max
  std::size_t evaluations = 0;
};

/// Largest Gamma at which tau0 is still rejected, by bisection on the
/// monotone membership indicator.
inline SensitivityValue sensitivity_value(const Dataset& ds, const std::vector<std::vector<double>>& regen_g,
                                          SensitivityConfig cfg, const SensitivityValueOptions& opts = {}) {
  if (!(opts.gamma_max > 1.0)) throw Error(ErrorCode::OutOfRange, "gamma_max must exceed 1");
  if (!(opts.tolerance > 0.0)) throw Error(ErrorCode::OutOfRange, "tolerance must be positive");
  SensitivityValue out;
  auto member_at = [&](double gamma) {
    cfg.gamma = gamma;
    ++out.evaluations;
    return test_tau0(ds, regen_g, cfg).member;
  };
  if (member_at(1.0)) {
    throw Error(ErrorCode::NotRejectedAtGammaOne, "tau0 lies in the confidence set at gamma = 1");
  }
  if (!member_at(opts.gamma_max)) {
    out.gamma_star = opts.gamma_max;
    out.capped = true;
    return out;
  }
  double lo = 1.0, hi = opts.gamma_max;
  while (hi - lo > opts.tolerance) {
    const double mid = 0.5 * (lo + hi);
    (member_at(mid) ? hi : lo) = mid;
  }
  out.gamma_star = lo;
  return out;
}

/// Logit transform of each regenerated propensity vector.
inline std::vector<std::vector<double>> logit_vectors(const RegenOutput& regen) {
  std::vector<std::vector<double>> out;
  out.reserve(regen.runs());
  for (const auto& p : regen.propensity_vectors) {
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!(p[i] > 0.0 && p[i] < 1.0)) throw Error(ErrorCode::OutOfRange, "propensity outside (0, 1)");
      g[i] = logit(p[i]);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace psprop
