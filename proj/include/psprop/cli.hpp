#pragma once

// Command-line front end: subcommands fit, propagate, simulate, fisher and
// sensitivity. Exit codes: 0 success, 2 config, 3 data, 4 numerical.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psprop/fisher.hpp"
#include "psprop/glm.hpp"
#include "psprop/harness.hpp"
#include "psprop/io.hpp"
#include "psprop/propagate.hpp"
#include "psprop/regen.hpp"
#include "psprop/sensitivity.hpp"

namespace psprop {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Numerical: return kExitNumerical;
  }
  return kExitNumerical;
}

struct CliOverrides {
  std::string config;
  std::optional<std::string> input, out, csv, mode, union_mode, problem;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> m_runs, threads, reps;
  std::optional<double> alpha, gamma, tau0;
};

namespace detail {

inline Matrix with_intercept(const Matrix& x) {
  Matrix out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

inline AnalysisConfig resolve_config(const CliOverrides& o) {
  AnalysisConfig cfg = o.config.empty() ? AnalysisConfig{} : load_config(o.config);
  if (o.input) cfg.input = *o.input;
  if (o.out) cfg.output = *o.out;
  if (o.problem) cfg.problem = problem_from_string(*o.problem);
  if (o.seed) cfg.seed = *o.seed;
  if (o.m_runs) cfg.regen.m_runs = *o.m_runs;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.threads) cfg.threads = *o.threads;
  if (o.reps) cfg.simulation.reps = *o.reps;
  if (o.mode) {
    try {
      cfg.regen.mode = regen_mode_from_string(*o.mode);
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, std::string("--mode: ") + e.what());
    }
  }
  if (o.union_mode) {
    if (*o.union_mode != "unrestricted" && *o.union_mode != "restricted") {
      throw Error(ErrorCode::ConfigError, "--union: unknown value '" + *o.union_mode + "'");
    }
    cfg.restricted = *o.union_mode == "restricted";
    if (cfg.restricted && !cfg.alpha_prime) cfg.alpha_prime = 0.01;
  }
  if (o.gamma || o.tau0) {
    if (!cfg.sensitivity) cfg.sensitivity = SensitivitySection{};
    if (o.gamma) cfg.sensitivity->gamma = *o.gamma;
    if (o.tau0) cfg.sensitivity->tau0 = *o.tau0;
  }
  cfg.regen.master_seed = cfg.seed;
  cfg.regen.threads = std::max<std::size_t>(1, cfg.threads);
  cfg.regen.alpha_prime = cfg.regen.mode == RegenMode::Parametric ? cfg.alpha_prime : std::nullopt;
  cfg.simulation.population.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

inline Dataset load_input(const AnalysisConfig& cfg) {
  if (cfg.input.empty()) throw Error(ErrorCode::ConfigError, "input: no input file given (--input or config)");
  return load_csv(cfg.input, cfg.problem);
}

inline std::vector<std::string> input_covariates(const AnalysisConfig& cfg) {
  std::ifstream in(cfg.input);
  std::string header;
  std::getline(in, header);
  return covariate_names(header, cfg.problem);
}

struct Regenerated {
  RegenOutput output;
  std::string learner;
};

inline Regenerated regenerate_for(const Dataset& ds, const AnalysisConfig& cfg) {
  Regenerated r;
  if (cfg.regen.mode == RegenMode::Parametric) {
    const Matrix xi = with_intercept(ds.x);
    const auto fit = fit_glm(xi, ds.z, cfg.link);
    r.output = regen_parametric(fit, xi, cfg.regen);
    r.learner = "glm(" + to_string(cfg.link) + ")";
    return r;
  }
  RegenConfig rc = cfg.regen;
  if (!cfg.tuning_grid.empty()) {
    const auto tuned = tune_by_mccv(cfg.tuning_grid, ds.x, ds.z, cfg.tuning_splits, RngStream(cfg.seed, kTuningStream),
                                    cfg.threads);
    rc.learner_a = rc.learner_b = tuned.best;
  }
  r.output = regenerate(ds, rc, cfg.link);
  r.learner = rc.learner_a.describe();
  return r;
}

inline void emit(const Json& j, const AnalysisConfig& cfg) {
  if (!cfg.output.empty()) write_json(j, cfg.output);
}

inline int cmd_fit(const AnalysisConfig& cfg, std::ostream& out) {
  const auto ds = load_input(cfg);
  const auto names = input_covariates(cfg);
  const auto fit = fit_glm(with_intercept(ds.x), ds.z, cfg.link);
  Json j;
  j["subcommand"] = "fit";
  j["link"] = to_string(fit.link);
  j["n_units"] = fit.n_units;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  Json coef = Json::array(), omega = Json::array();
  out << std::left << std::setw(16) << "term" << std::right << std::setw(14) << "estimate" << std::setw(14) << "std_error"
      << '\n';
  const double nn = static_cast<double>(fit.n_units);
  for (Eigen::Index k = 0; k < fit.beta_hat.size(); ++k) {
    const std::string name = k == 0 ? "intercept" : names[static_cast<std::size_t>(k - 1)];
    const double se = std::sqrt(fit.omega_hat(k, k) / nn);
    coef.push_back({{"term", name}, {"estimate", fit.beta_hat(k)}, {"std_error", se}});
    Json row = Json::array();
    for (Eigen::Index l = 0; l < fit.omega_hat.cols(); ++l) row.push_back(fit.omega_hat(k, l));
    omega.push_back(row);
    out << std::left << std::setw(16) << name << std::right << std::setw(14) << std::setprecision(6) << fit.beta_hat(k)
        << std::setw(14) << se << '\n';
  }
  j["coefficients"] = coef;
  j["omega_hat"] = omega;
  emit(j, cfg);
  return kExitOk;
}

inline int cmd_propagate(const AnalysisConfig& cfg, std::ostream& out) {
  const auto ds = load_input(cfg);
  const auto regen = regenerate_for(ds, cfg);
  UnionMode mode = Unrestricted{};
  if (cfg.restricted) mode = Restricted{*cfg.alpha_prime};
  const auto set = propagate_ci(ds, regen.output, cfg.alpha, mode, cfg.estimator_kind());
  Json j;
  j["subcommand"] = "propagate";
  j["problem"] = to_string(cfg.problem);
  j["estimator"] = to_string(cfg.estimator_kind());
  j["mode"] = to_string(cfg.regen.mode);
  j["union"] = cfg.restricted ? "restricted" : "unrestricted";
  j["m_runs"] = cfg.regen.m_runs;
  j["alpha"] = cfg.alpha;
  j["seed"] = cfg.seed;
  j["learner"] = regen.learner;
  const Json body = to_json(set);
  for (const auto& [k, v] : body.items()) j[k] = v;
  emit(j, cfg);
  out << "confidence set (" << (1.0 - cfg.alpha) * 100.0 << "%): ";
  for (const auto& c : set.confidence_set.components()) out << '[' << c.lo << ", " << c.hi << "] ";
  out << "\nmeasure " << set.confidence_set.measure() << " over " << set.used_runs.size() << " runs\n";
  for (const auto& w : set.warnings) out << "warning: " << w << '\n';
  return kExitOk;
}

inline int cmd_fisher(const AnalysisConfig& cfg, std::ostream& out) {
  const auto ds = load_input(cfg);
  const auto regen = regenerate_for(ds, cfg);
  const auto stat = TestStatistic::from_name(cfg.fisher.statistic);
  const auto res = fisher_propagate(ds, regen.output, stat, cfg.fisher.draws, RngStream(cfg.seed, 7), cfg.threads);
  Json j;
  j["subcommand"] = "fisher";
  j["statistic"] = stat.label();
  j["statistic_observed"] = res.statistic_observed;
  j["draws"] = cfg.fisher.draws;
  j["mode"] = to_string(cfg.regen.mode);
  j["m_runs"] = cfg.regen.m_runs;
  j["seed"] = cfg.seed;
  j["learner"] = regen.learner;
  j["p_value"] = res.p_value;
  j["per_run_p_values"] = res.per_run_p_values;
  emit(j, cfg);
  out << "statistic " << stat.label() << " = " << res.statistic_observed << "\np_F = " << res.p_value << " (max over "
      << res.per_run_p_values.size() << " runs)\n";
  return kExitOk;
}

inline int cmd_sensitivity(const AnalysisConfig& cfg, std::ostream& out) {
  const auto ds = load_input(cfg);
  const auto regen = regenerate_for(ds, cfg);
  const auto g = logit_vectors(regen.output);
  const SensitivitySection sec = cfg.sensitivity.value_or(SensitivitySection{});
  SensitivityConfig sc;
  sc.gamma = sec.gamma;
  sc.alpha = cfg.alpha;
  sc.tau0 = sec.tau0;
  sc.restarts = sec.restarts;
  sc.max_iterations = sec.max_iterations;
  sc.step_tolerance = sec.step_tolerance;
  sc.corner_oracle_limit = sec.corner_oracle_limit;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  const auto member = test_tau0(ds, g, sc);
  const auto set = sensitivity_set(ds, g, sc);
  Json j;
  j["subcommand"] = "sensitivity";
  j["gamma"] = sc.gamma;
  j["tau0"] = sc.tau0;
  j["alpha"] = sc.alpha;
  j["mode"] = to_string(cfg.regen.mode);
  j["m_runs"] = cfg.regen.m_runs;
  j["seed"] = cfg.seed;
  j["learner"] = regen.learner;
  j["membership"] = member.member;
  j["per_run_d_star"] = member.d_star;
  j["sensitivity_set"] = to_json(set);
  out << "gamma " << sc.gamma << ": tau0 = " << sc.tau0 << (member.member ? " is in" : " is not in")
      << " the sensitivity set\nsensitivity set: ";
  for (const auto& c : set.components()) out << '[' << c.lo << ", " << c.hi << "] ";
  out << '\n';
  if (sec.compute_value) {
    try {
      const auto v = sensitivity_value(ds, g, sc, {sec.gamma_max, sec.tolerance});
      j["gamma_star"] = v.gamma_star;
      j["gamma_star_capped"] = v.capped;
      out << "sensitivity value gamma* = " << v.gamma_star << (v.capped ? " (search cap reached)" : "") << '\n';
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotRejectedAtGammaOne) throw;
      j["gamma_star"] = nullptr;
      j["gamma_star_note"] = e.what();
      out << "sensitivity value undefined: " << e.what() << '\n';
    }
  }
  emit(j, cfg);
  return kExitOk;
}

inline int cmd_simulate(const AnalysisConfig& cfg, const std::optional<std::string>& csv, std::ostream& out) {
  ExperimentConfig ec;
  ec.population = cfg.simulation.population;
  ec.methods = cfg.simulation.methods;
  ec.reps = cfg.simulation.reps;
  ec.alpha = cfg.alpha;
  ec.regen = cfg.regen;
  ec.regen.threads = 1;
  ec.tuning_grid = cfg.tuning_grid;
  ec.tuning_splits = cfg.tuning_splits;
  ec.keep_replications = cfg.simulation.keep_replications;
  ec.threads = cfg.threads;
  const auto report = run_experiment(ec);
  const auto table = report_csv(report);
  if (!cfg.output.empty()) write_report(report, cfg.output);
  if (csv) {
    std::ofstream f(*csv);
    if (!f) throw Error(ErrorCode::IoError, "cannot write '" + *csv + "'");
    f << table;
  }
  out << table;
  return kExitOk;
}

}  // namespace detail

/// Parses argv, runs one subcommand, and maps failures to exit codes.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Propensity score propagation: regeneration-and-union inference with estimated propensities"};
  app.require_subcommand(1);
  CliOverrides o;
  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--input", o.input, "input CSV");
    sub->add_option("--out", o.out, "write JSON output here");
    sub->add_option("--seed", o.seed, "master seed");
    sub->add_option("--m-runs", o.m_runs, "regeneration runs");
    sub->add_option("--alpha", o.alpha, "miscoverage level");
    sub->add_option("--mode", o.mode, "parametric, crossfit or subsample");
    sub->add_option("--union", o.union_mode, "unrestricted or restricted");
    sub->add_option("--threads", o.threads, "worker threads");
    sub->add_option("--problem", o.problem, "ate, survey, missing or did");
  };
  auto* fit = app.add_subcommand("fit", "fit the parametric propensity model");
  auto* propagate = app.add_subcommand("propagate", "regenerate propensities and report the union confidence set");
  auto* simulate = app.add_subcommand("simulate", "run the coverage simulation");
  auto* fisher = app.add_subcommand("fisher", "propagated Fisher randomization test");
  auto* sensitivity = app.add_subcommand("sensitivity", "sensitivity analysis for hidden bias");
  for (auto* sub : {fit, propagate, simulate, fisher, sensitivity}) add_common(sub);
  simulate->add_option("--csv", o.csv, "also write the CSV report here");
  simulate->add_option("--reps", o.reps, "replications");
  sensitivity->add_option("--gamma", o.gamma, "sensitivity parameter (>= 1)");
  sensitivity->add_option("--tau0", o.tau0, "hypothesized effect");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    const auto cfg = detail::resolve_config(o);
    if (fit->parsed()) return detail::cmd_fit(cfg, out);
    if (propagate->parsed()) return detail::cmd_propagate(cfg, out);
    if (simulate->parsed()) return detail::cmd_simulate(cfg, o.csv, out);
    if (fisher->parsed()) return detail::cmd_fisher(cfg, out);
    if (sensitivity->parsed()) return detail::cmd_sensitivity(cfg, out);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  err << app.help();
  return kExitConfig;
}

}  // namespace psprop
