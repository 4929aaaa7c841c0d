#pragma once

// Monte Carlo harness for the coverage study: a fixed finite population,
// repeated assignment draws with known propensities, and per-method
// coverage / bias / length aggregation.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/estimators.hpp"
#include "psprop/learners.hpp"
#include "psprop/numkit.hpp"
#include "psprop/parallel.hpp"
#include "psprop/propagate.hpp"
#include "psprop/regen.hpp"

namespace psprop {

enum class EffectSetting { Effect1, Effect2 };
enum class PropensitySetting { SelectionModel, LogisticModel };

inline std::string to_string(EffectSetting e) { return e == EffectSetting::Effect1 ? "effect1" : "effect2"; }
inline std::string to_string(PropensitySetting p) {
  return p == PropensitySetting::SelectionModel ? "selection_model" : "logistic_model";
}

inline EffectSetting effect_from_string(const std::string& s) {
  if (s == "effect1") return EffectSetting::Effect1;
  if (s == "effect2") return EffectSetting::Effect2;
  throw Error(ErrorCode::ConfigError, "unknown effect setting '" + s + "'");
}

inline PropensitySetting propensity_setting_from_string(const std::string& s) {
  if (s == "selection_model") return PropensitySetting::SelectionModel;
  if (s == "logistic_model") return PropensitySetting::LogisticModel;
  throw Error(ErrorCode::ConfigError, "unknown propensity setting '" + s + "'");
}

struct PopulationSpec {
  std::size_t n_units = 1000;
  EffectSetting effect = EffectSetting::Effect1;
  PropensitySetting propensity = PropensitySetting::SelectionModel;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_units < 10) throw Error(ErrorCode::ConfigError, "n_units must be at least 10");
  }
};

struct FixedPopulation {
  PopulationSpec spec;
  Matrix x;  // N x 5
  std::vector<double> y0, y1;
  PropensityVector oracle_p;
  double tau = 0.0;
};

inline constexpr double kOracleFloor = 1e-12;
inline constexpr double kLogGuard = 1e-8;

inline double selection_index(const double* x) {
  const double x3 = std::max(std::abs(x[2]), kLogGuard);
  return 0.1 * x[0] * x[0] * x[0] + 0.3 * x[1] + 0.2 * std::log(x3 * x3) + 0.1 * x[3] + 0.2 * x[4] +
         0.1 * std::abs(x[0] * x[1]) + 0.3 * (x[1] * x[3]) * (x[1] * x[3]);
}

inline double logistic_index(const double* x) {
  const double x3 = std::max(std::abs(x[2]), kLogGuard);
  return 0.1 * x[0] * x[0] * x[0] + 0.3 * x[1] + 0.2 * std::log(x3 * x3) + 0.1 * x[3] + 0.2 * x[4] +
         0.2 * std::abs(x[0] * x[1]) + 0.4 * (x[2] * x[3]) * (x[2] * x[3]) + 0.1 * (x[1] * x[3]) * (x[1] * x[3]) - 1.0;
}

/// Oracle propensity of a covariate row under the given setting.
/// Clamped to [kOracleFloor, 1 - kOracleFloor] so extreme rows stay interior.
inline double oracle_propensity(PropensitySetting setting, const double* x) {
  const double p = setting == PropensitySetting::SelectionModel ? normal_cdf(selection_index(x) - 0.5)
                                                                : sigmoid(logistic_index(x));
  return std::clamp(p, kOracleFloor, 1.0 - kOracleFloor);
}

inline double control_outcome(const double* x, double eps) {
  return 0.15 * x[0] * x[0] * x[0] + 0.15 * std::abs(x[1]) + 0.1 * x[2] * x[2] * x[2] + 0.3 * std::abs(x[3]) +
         0.2 * x[4] + 0.1 * eps;
}

inline double treated_outcome(EffectSetting effect, const double* x, double y0) {
  if (effect == EffectSetting::Effect1) return y0 + 1.0 + 0.3 * std::sin(x[1]) + 0.2 * x[3] + 0.1 * x[4];
  return y0 + 1.0 + 0.3 * std::abs(x[0]) + 0.1 * std::tanh(x[4]);
}

inline FixedPopulation generate_population(const PopulationSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_units;
  const double laplace_scale = std::sqrt(2.0) / 2.0;
  RngStream rng(spec.seed, 0);
  FixedPopulation pop;
  pop.spec = spec;
  pop.x.resize(static_cast<Eigen::Index>(n), 5);
  pop.y0.resize(n);
  pop.y1.resize(n);
  std::vector<double> p(n);
  double row[5];
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    row[0] = rng.standard_normal();
    row[1] = rng.standard_normal();
    row[2] = rng.standard_normal();
    row[3] = rng.laplace(laplace_scale);
    row[4] = rng.laplace(laplace_scale);
    const double eps = rng.standard_normal();
    for (int j = 0; j < 5; ++j) pop.x(static_cast<Eigen::Index>(i), j) = row[j];
    pop.y0[i] = control_outcome(row, eps);
    pop.y1[i] = treated_outcome(spec.effect, row, pop.y0[i]);
    p[i] = oracle_propensity(spec.propensity, row);
    sum += pop.y1[i] - pop.y0[i];
  }
  pop.oracle_p = PropensityVector(std::move(p));
  pop.tau = sum / static_cast<double>(n);
  return pop;
}

inline BitVector draw_assignment(const FixedPopulation& pop, RngStream& stream) {
  BitVector z(pop.oracle_p.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<std::uint8_t>(stream.bernoulli(pop.oracle_p[i]));
  return z;
}

/// Observed data for an assignment: Y = Z Y(1) + (1 - Z) Y(0).
inline Dataset observe(const FixedPopulation& pop, const BitVector& z) {
  std::vector<double> y(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) y[i] = z[i] ? pop.y1[i] : pop.y0[i];
  return Dataset::complete(z, pop.x, std::move(y));
}

/// Oracle bias-aware intervals (T - chi, T + chi) with
/// chi = SE sqrt(q_{1-alpha}(bias^2 / SE^2)), q the noncentral chi-square(1)
/// quantile, bias and SE taken across replications.
inline std::vector<Interval> oba_interval(std::span<const double> estimates, double tau, double alpha) {
  const std::size_t r = estimates.size();
  if (r < 2) throw Error(ErrorCode::TooFewReplications, "OBA intervals need at least two replications");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 1)");
  double mean = 0.0;
  for (double t : estimates) mean += t;
  mean /= static_cast<double>(r);
  double ss = 0.0;
  for (double t : estimates) ss += (t - mean) * (t - mean);
  const double se = std::sqrt(ss / static_cast<double>(r - 1));
  const double bias = std::abs(mean - tau);
  double chi = bias;
  if (se > 0.0) chi = se * std::sqrt(noncentral_chisq1_quantile(1.0 - alpha, bias * bias / (se * se)));
  std::vector<Interval> out;
  out.reserve(r);
  for (double t : estimates) out.push_back({t - chi, t + chi});
  return out;
}

enum class Method { Oracle, PlugIn, Propagation };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Oracle: return "oracle";
    case Method::PlugIn: return "plug_in";
    case Method::Propagation: return "propagation";
  }
  return "unknown";
}

inline Method method_from_string(const std::string& s) {
  if (s == "oracle") return Method::Oracle;
  if (s == "plug_in") return Method::PlugIn;
  if (s == "propagation") return Method::Propagation;
  throw Error(ErrorCode::ConfigError, "unknown method '" + s + "'");
}

struct ExperimentConfig {
  PopulationSpec population;
  std::vector<Method> methods{Method::Oracle, Method::PlugIn, Method::Propagation};
  std::size_t reps = 200;
  double alpha = 0.05;
  RegenConfig regen;                     // learner_a / learner_b replaced by the tuned spec when tuning
  std::vector<LearnerSpec> tuning_grid;  // empty: use regen.learner_a as given
  std::size_t tuning_splits = 10;
  bool plugin_uses_oracle = false;       // plug-in fed the oracle propensities instead of a learner
  bool keep_replications = false;
  std::size_t threads = 1;

  void validate() const {
    population.validate();
    regen.validate();
    if (reps < 1) throw Error(ErrorCode::ConfigError, "reps must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::ConfigError, "alpha must lie in (0, 1)");
    if (methods.empty()) throw Error(ErrorCode::ConfigError, "no methods selected");
    if (!tuning_grid.empty() && tuning_splits < 1) throw Error(ErrorCode::ConfigError, "tuning_splits must be >= 1");
  }

  bool has(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
};

struct MethodRecord {
  bool ok = false;
  double point = 0.0;  // NaN-free only when ok
  double lo = 0.0, hi = 0.0;
  double length = 0.0;
  bool covered = false;
  std::string error;
};

struct ReplicationRecord {
  std::size_t index = 0;
  std::size_t n_treated = 0;
  std::vector<MethodRecord> methods;  // parallel to ExperimentConfig::methods
};

struct MethodRow {
  Method method = Method::Oracle;
  std::size_t successes = 0;
  std::size_t failures = 0;
  double coverage = 0.0;
  std::optional<double> bias;  // absent for propagation
  double mean_length = 0.0;
  std::optional<double> length_ratio;  // to the oracle row
  std::optional<double> oba_coverage;
  std::optional<double> oba_length;
  std::optional<double> propagation_to_oba;
};

struct ExperimentReport {
  PopulationSpec population;
  std::size_t reps = 0;
  double alpha = 0.05;
  std::uint64_t regen_seed = 0;
  std::size_t m_runs = 0;
  std::string regen_mode;
  std::string learner;
  std::optional<double> tuning_auc;
  double tau = 0.0;
  std::vector<MethodRow> rows;
  std::vector<ReplicationRecord> replications;  // only when keep_replications
  double runtime_seconds = 0.0;                // not part of the serialized report

  const MethodRow* row(Method m) const {
    for (const auto& r : rows) {
      if (r.method == m) return &r;
    }
    return nullptr;
  }
};

inline constexpr std::uint64_t kAssignmentStream = 1;
inline constexpr std::uint64_t kPilotStream = 2;
inline constexpr std::uint64_t kTuningStream = 3;
inline constexpr std::uint64_t kLearnerStream = 4;

/// Learner choice for an experiment: MCCV tuning on one pilot assignment
/// when a grid is supplied, the configured learner otherwise.
inline std::pair<LearnerSpec, std::optional<double>> choose_learner(const FixedPopulation& pop,
                                                                    const ExperimentConfig& cfg) {
  if (cfg.tuning_grid.empty()) return {cfg.regen.learner_a, std::nullopt};
  RngStream pilot(pop.spec.seed, kPilotStream);
  const auto z = draw_assignment(pop, pilot);
  const auto tuned = tune_by_mccv(cfg.tuning_grid, pop.x, z, cfg.tuning_splits, RngStream(pop.spec.seed, kTuningStream),
                                  cfg.threads);
  std::optional<double> auc;
  if (!std::isnan(tuned.mean_auc[tuned.best_index])) auc = tuned.mean_auc[tuned.best_index];
  return {tuned.best, auc};
}

namespace detail {

inline MethodRecord run_method(Method method, const FixedPopulation& pop, const Dataset& ds,
                               const LearnerSpec& learner, const ExperimentConfig& cfg, std::size_t rep) {
  MethodRecord rec;
  try {
    switch (method) {
      case Method::Oracle:
      case Method::PlugIn: {
        PropensityVector p = pop.oracle_p;
        if (method == Method::PlugIn && !cfg.plugin_uses_oracle) {
          RngStream rng = RngStream(cfg.regen.master_seed, kLearnerStream).child(rep);
          const auto model = train(learner, ds.x, ds.z, rng);
          p = clip_propensities(PropensityVector(model.predict(ds.x)), cfg.regen.clip_delta);
        }
        const auto est = ipw_estimate(ds, p);
        const auto ci = wald_interval(est, cfg.alpha);
        rec.point = est.point;
        rec.lo = ci.lo;
        rec.hi = ci.hi;
        rec.length = ci.length();
        rec.covered = ci.contains(pop.tau);
        break;
      }
      case Method::Propagation: {
        RegenConfig rc = cfg.regen;
        rc.learner_a = rc.learner_b = learner;
        rc.master_seed = detail::mix_seed(cfg.regen.master_seed, rep);
        rc.threads = 1;
        const auto regen = regenerate(ds, rc);
        const auto set = propagate_ci(ds, regen, cfg.alpha, Unrestricted{}, EstimatorKind::Ipw);
        const auto hull = set.confidence_set.hull();
        rec.lo = hull.lo;
        rec.hi = hull.hi;
        rec.length = set.confidence_set.measure();
        rec.covered = set.confidence_set.contains(pop.tau);
        break;
      }
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

}  // namespace detail

/// One fixed population, cfg.reps assignment draws, every selected method per
/// draw, then aggregation. Replications use their own streams, so the report
/// does not depend on cfg.threads.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto pop = generate_population(cfg.population);
  const auto [learner, auc] = choose_learner(pop, cfg);

  std::vector<ReplicationRecord> reps(cfg.reps);
  const RngStream assign(cfg.population.seed, kAssignmentStream);
  parallel_for(cfg.reps, cfg.threads, [&](std::size_t r) {
    RngStream rng = assign.child(r);
    const auto z = draw_assignment(pop, rng);
    const auto ds = observe(pop, z);
    ReplicationRecord rec;
    rec.index = r;
    rec.n_treated = static_cast<std::size_t>(std::count(z.begin(), z.end(), std::uint8_t{1}));
    for (auto m : cfg.methods) rec.methods.push_back(detail::run_method(m, pop, ds, learner, cfg, r));
    reps[r] = std::move(rec);
  });

  ExperimentReport report;
  report.population = cfg.population;
  report.reps = cfg.reps;
  report.alpha = cfg.alpha;
  report.regen_seed = cfg.regen.master_seed;
  report.m_runs = cfg.regen.m_runs;
  report.regen_mode = to_string(cfg.regen.mode);
  report.learner = learner.describe();
  report.tuning_auc = auc;
  report.tau = pop.tau;

  std::optional<double> oracle_length;
  std::optional<double> propagation_length;
  for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
    MethodRow row;
    row.method = cfg.methods[k];
    double covered = 0.0, bias = 0.0, length = 0.0;
    std::vector<double> points;
    for (const auto& rep : reps) {
      const auto& m = rep.methods[k];
      if (!m.ok) {
        ++row.failures;
        continue;
      }
      ++row.successes;
      covered += m.covered ? 1.0 : 0.0;
      bias += m.point - pop.tau;
      length += m.length;
      points.push_back(m.point);
    }
    if (row.successes > 0) {
      const double s = static_cast<double>(row.successes);
      row.coverage = covered / s;
      row.mean_length = length / s;
      if (row.method != Method::Propagation) row.bias = bias / s;
    }
    if (row.method == Method::Oracle && row.successes > 0) oracle_length = row.mean_length;
    if (row.method == Method::Propagation && row.successes > 0) propagation_length = row.mean_length;
    if (row.method == Method::PlugIn && points.size() >= 2) {
      const auto oba = oba_interval(points, pop.tau, cfg.alpha);
      double oc = 0.0, ol = 0.0;
      for (const auto& iv : oba) {
        oc += iv.lo < pop.tau && pop.tau < iv.hi ? 1.0 : 0.0;
        ol += iv.length();
      }
      row.oba_coverage = oc / static_cast<double>(oba.size());
      row.oba_length = ol / static_cast<double>(oba.size());
    }
    report.rows.push_back(row);
  }
  for (auto& row : report.rows) {
    if (oracle_length && *oracle_length > 0.0 && row.successes > 0) row.length_ratio = row.mean_length / *oracle_length;
    if (row.oba_length && propagation_length && *row.oba_length > 0.0) {
      row.propagation_to_oba = *propagation_length / *row.oba_length;
    }
  }
  if (cfg.keep_replications) report.replications = std::move(reps);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace psprop
