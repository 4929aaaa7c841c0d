#pragma once

// CSV ingestion, JSON configuration, and report serialization.

#include <charconv>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "psprop/dataset.hpp"
#include "psprop/error.hpp"
#include "psprop/harness.hpp"
#include "psprop/learners.hpp"
#include "psprop/propagate.hpp"
#include "psprop/regen.hpp"

namespace psprop {

using Json = nlohmann::ordered_json;

enum class Problem { Ate, Survey, Missing, Did };

inline std::string to_string(Problem p) {
  switch (p) {
    case Problem::Ate: return "ate";
    case Problem::Survey: return "survey";
    case Problem::Missing: return "missing";
    case Problem::Did: return "did";
  }
  return "unknown";
}

inline Problem problem_from_string(const std::string& s) {
  if (s == "ate") return Problem::Ate;
  if (s == "survey") return Problem::Survey;
  if (s == "missing") return Problem::Missing;
  if (s == "did") return Problem::Did;
  throw Error(ErrorCode::ConfigError, "problem: unknown value '" + s + "' (expected ate, survey, missing or did)");
}

inline EstimatorKind default_estimator(Problem p) {
  switch (p) {
    case Problem::Ate: return EstimatorKind::Ipw;
    case Problem::Survey: return EstimatorKind::HorvitzThompson;
    case Problem::Missing: return EstimatorKind::MissingOutcome;
    case Problem::Did: return EstimatorKind::DifferenceInDifferences;
  }
  return EstimatorKind::Ipw;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    cells.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cells;
}

inline double parse_real(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw Error(ErrorCode::ParseError,
                "row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + cell + "' as a number");
  }
  return v;
}

inline std::uint8_t parse_bit(const std::string& cell, std::size_t row, const std::string& column) {
  const double v = parse_real(cell, row, column);
  if (v != 0.0 && v != 1.0) {
    throw Error(ErrorCode::ParseError,
                "row " + std::to_string(row) + ", column '" + column + "': expected 0 or 1, got '" + cell + "'");
  }
  return static_cast<std::uint8_t>(v);
}

}  // namespace detail

/// Reads a header row plus numeric rows. Reserved columns depend on the
/// problem (ate: z, y; survey/missing: z, y, optional treat; did: z, y0, y1);
/// every other column is a covariate, in header order. Blank y cells mark
/// unobserved outcomes; row numbers in errors count the header as row 1.
inline Dataset parse_csv(std::istream& in, Problem problem) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::SchemaError, "input is empty; a header row is required");
  const auto header = detail::split_row(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j].empty()) throw Error(ErrorCode::SchemaError, "header column " + std::to_string(j + 1) + " is blank");
    if (!index.emplace(header[j], j).second) {
      throw Error(ErrorCode::SchemaError, "duplicate column '" + header[j] + "'");
    }
  }
  std::set<std::string> reserved{"z"};
  if (problem == Problem::Did) {
    reserved.insert({"y0", "y1"});
  } else {
    reserved.insert("y");
  }
  if (problem == Problem::Missing || problem == Problem::Survey) reserved.insert("treat");
  for (const auto& col : reserved) {
    if (col == "treat") continue;
    if (!index.count(col)) {
      throw Error(ErrorCode::SchemaError, "missing column '" + col + "' for problem '" + to_string(problem) + "'");
    }
  }
  if (problem == Problem::Missing && !index.count("treat")) {
    throw Error(ErrorCode::SchemaError, "missing column 'treat' for problem 'missing'");
  }
  std::vector<std::size_t> covariates;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!reserved.count(header[j])) covariates.push_back(j);
  }

  Dataset ds;
  std::vector<std::vector<double>> rows;
  std::vector<double> baseline;
  BitVector treat;
  const bool has_treat = index.count("treat") > 0;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_row(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(row) + ": expected " +
                                             std::to_string(header.size()) + " cells, found " +
                                             std::to_string(cells.size()));
    }
    const auto z = detail::parse_bit(cells[index["z"]], row, "z");
    ds.z.push_back(z);
    if (problem == Problem::Did) {
      baseline.push_back(detail::parse_real(cells[index["y0"]], row, "y0"));
      ds.y.push_back(detail::parse_real(cells[index["y1"]], row, "y1"));
      ds.observed.push_back(1);
    } else {
      const auto& cell = cells[index["y"]];
      if (cell.empty()) {
        if (problem == Problem::Ate) {
          throw Error(ErrorCode::InconsistentRow, "row " + std::to_string(row) + ": blank y in an ate file");
        }
        if (z) {
          throw Error(ErrorCode::InconsistentRow,
                      "row " + std::to_string(row) + ": z = 1 but y is blank (a sampled unit needs its outcome)");
        }
        ds.y.push_back(0.0);
        ds.observed.push_back(0);
      } else {
        ds.y.push_back(detail::parse_real(cell, row, "y"));
        ds.observed.push_back(1);
      }
    }
    if (has_treat) treat.push_back(detail::parse_bit(cells[index["treat"]], row, "treat"));
    std::vector<double> xs;
    xs.reserve(covariates.size());
    for (auto j : covariates) xs.push_back(detail::parse_real(cells[j], row, header[j]));
    rows.push_back(std::move(xs));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  ds.x.resize(n, static_cast<Eigen::Index>(covariates.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < ds.x.cols(); ++j) ds.x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  if (has_treat) ds.treat = std::move(treat);
  if (problem == Problem::Did) ds.baseline = std::move(baseline);
  ds.validate();
  return ds;
}

inline Dataset load_csv(const std::string& path, Problem problem) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open input file '" + path + "'");
  return parse_csv(in, problem);
}

/// Covariate names of a CSV header, in the order load_csv uses.
inline std::vector<std::string> covariate_names(const std::string& header_line, Problem problem) {
  std::set<std::string> reserved{"z", "treat"};
  if (problem == Problem::Did) {
    reserved.insert({"y0", "y1"});
  } else {
    reserved.insert("y");
  }
  std::vector<std::string> out;
  for (auto& c : detail::split_row(header_line)) {
    if (!reserved.count(c)) out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration

struct SensitivitySection {
  double gamma = 1.0;
  double tau0 = 0.0;
  std::size_t restarts = 16;
  std::size_t max_iterations = 500;
  double step_tolerance = 1e-10;
  std::size_t corner_oracle_limit = 12;
  bool compute_value = false;
  double gamma_max = 20.0;
  double tolerance = 1e-3;
};

struct FisherSection {
  std::string statistic = "abs_difference_in_means";
  std::size_t draws = 1000;
};

struct SimulationSection {
  PopulationSpec population;
  std::size_t reps = 200;
  std::vector<Method> methods{Method::Oracle, Method::PlugIn, Method::Propagation};
  bool keep_replications = false;
};

struct AnalysisConfig {
  Problem problem = Problem::Ate;
  std::optional<EstimatorKind> estimator;
  std::string input;
  std::string output;
  std::uint64_t seed = 0;
  double alpha = 0.05;
  std::optional<double> alpha_prime;
  bool restricted = false;
  Link link = Link::Logistic;
  RegenConfig regen;
  std::vector<LearnerSpec> tuning_grid;  // empty: no tuning
  std::size_t tuning_splits = 10;
  std::optional<SensitivitySection> sensitivity;
  FisherSection fisher;
  SimulationSection simulation;
  std::size_t threads = 1;

  EstimatorKind estimator_kind() const { return estimator.value_or(default_estimator(problem)); }

  /// Cross-field checks; messages name the offending field.
  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::ConfigError, "alpha: must lie in (0, 1)");
    if (alpha_prime && !(*alpha_prime > 0.0 && *alpha_prime < alpha)) {
      throw Error(ErrorCode::ConfigError, "alpha_prime: must lie in (0, alpha)");
    }
    if (restricted && regen.mode != RegenMode::Parametric) {
      throw Error(ErrorCode::ConfigError, "union: restricted requires regen.mode = parametric");
    }
    if (restricted && !alpha_prime) throw Error(ErrorCode::ConfigError, "alpha_prime: required for the restricted union");
    if (regen.m_runs < 1) throw Error(ErrorCode::ConfigError, "regen.m_runs: must be at least 1");
    if (!(regen.clip_delta > 0.0 && regen.clip_delta < 0.5)) {
      throw Error(ErrorCode::ConfigError, "regen.clip_delta: must lie in (0, 0.5)");
    }
    if (!(regen.subsample_rate > 0.0 && regen.subsample_rate <= 1.0)) {
      throw Error(ErrorCode::ConfigError, "regen.subsample_rate: must lie in (0, 1]");
    }
    if (sensitivity && !(sensitivity->gamma >= 1.0)) throw Error(ErrorCode::ConfigError, "sensitivity.gamma: must be >= 1");
    if (fisher.draws < 1) throw Error(ErrorCode::ConfigError, "fisher.draws: must be at least 1");
    if (simulation.reps < 1) throw Error(ErrorCode::ConfigError, "simulation.reps: must be at least 1");
    if (simulation.population.n_units < 10) {
      throw Error(ErrorCode::ConfigError, "simulation.n_units: must be at least 10");
    }
  }
};

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw Error(ErrorCode::ConfigError, where + ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) {
      throw Error(ErrorCode::ConfigError, (where.empty() ? "" : where + ".") + it.key() + ": unknown field");
    }
  }
}

template <typename T>
T get_field(const Json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::ConfigError, (where.empty() ? "" : where + ".") + key + ": wrong type");
  }
}

inline std::size_t get_count(const Json& obj, const char* key, const std::string& where, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw Error(ErrorCode::ConfigError, (where.empty() ? "" : where + ".") + key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

inline LearnerSpec parse_learner(const Json& j, const std::string& where) {
  reject_unknown(j, {"kind", "link", "rounds", "max_depth", "learning_rate", "min_child_weight", "gamma", "lambda"},
                 where);
  const auto kind = get_field<std::string>(j, "kind", where, "glm");
  try {
    if (kind == "glm") return LearnerSpec::glm(link_from_string(get_field<std::string>(j, "link", where, "logistic")));
    if (kind == "boosted") {
      BoostParams p;
      p.rounds = static_cast<int>(get_count(j, "rounds", where, static_cast<std::size_t>(p.rounds)));
      p.max_depth = static_cast<int>(get_count(j, "max_depth", where, static_cast<std::size_t>(p.max_depth)));
      p.learning_rate = get_field<double>(j, "learning_rate", where, p.learning_rate);
      p.min_child_weight = get_field<double>(j, "min_child_weight", where, p.min_child_weight);
      p.gamma = get_field<double>(j, "gamma", where, p.gamma);
      p.lambda = get_field<double>(j, "lambda", where, p.lambda);
      return LearnerSpec::boosted(p);
    }
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::Config) throw;
    throw Error(ErrorCode::ConfigError, where + ": " + e.what());
  }
  throw Error(ErrorCode::ConfigError, where + ".kind: unknown learner '" + kind + "'");
}

}  // namespace detail

/// Validating loader: unknown keys and wrong types are ConfigErrors naming
/// the field.
inline AnalysisConfig parse_config(const Json& j) {
  using namespace detail;
  reject_unknown(j, {"problem", "estimator", "input", "output", "seed", "alpha", "alpha_prime", "union", "link", "regen",
                     "learner", "tuning", "sensitivity", "fisher", "simulation", "threads"},
                 "");
  AnalysisConfig cfg;
  cfg.problem = problem_from_string(get_field<std::string>(j, "problem", "", "ate"));
  if (j.contains("estimator")) {
    const auto e = get_field<std::string>(j, "estimator", "", "");
    if (e == "ipw") cfg.estimator = EstimatorKind::Ipw;
    else if (e == "ht") cfg.estimator = EstimatorKind::HorvitzThompson;
    else if (e == "missing") cfg.estimator = EstimatorKind::MissingOutcome;
    else if (e == "did") cfg.estimator = EstimatorKind::DifferenceInDifferences;
    else throw Error(ErrorCode::ConfigError, "estimator: unknown value '" + e + "'");
  }
  cfg.input = get_field<std::string>(j, "input", "", "");
  cfg.output = get_field<std::string>(j, "output", "", "");
  cfg.seed = get_count(j, "seed", "", 0);
  cfg.alpha = get_field<double>(j, "alpha", "", 0.05);
  if (j.contains("alpha_prime")) cfg.alpha_prime = get_field<double>(j, "alpha_prime", "", 0.01);
  const auto u = get_field<std::string>(j, "union", "", "unrestricted");
  if (u != "unrestricted" && u != "restricted") throw Error(ErrorCode::ConfigError, "union: unknown value '" + u + "'");
  cfg.restricted = u == "restricted";
  try {
    cfg.link = link_from_string(get_field<std::string>(j, "link", "", "logistic"));
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, std::string("link: ") + e.what());
  }
  cfg.threads = get_count(j, "threads", "", 1);

  if (j.contains("regen")) {
    const auto& r = j.at("regen");
    reject_unknown(r, {"mode", "m_runs", "subsample_rate", "clip_delta"}, "regen");
    try {
      cfg.regen.mode = regen_mode_from_string(get_field<std::string>(r, "mode", "regen", "crossfit"));
    } catch (const Error& e) {
      throw Error(ErrorCode::ConfigError, std::string("regen.mode: ") + e.what());
    }
    cfg.regen.m_runs = get_count(r, "m_runs", "regen", cfg.regen.m_runs);
    cfg.regen.subsample_rate = get_field<double>(r, "subsample_rate", "regen", cfg.regen.subsample_rate);
    cfg.regen.clip_delta = get_field<double>(r, "clip_delta", "regen", cfg.regen.clip_delta);
  }
  if (j.contains("learner")) cfg.regen.learner_a = cfg.regen.learner_b = parse_learner(j.at("learner"), "learner");
  if (j.contains("tuning")) {
    const auto& t = j.at("tuning");
    reject_unknown(t, {"grid", "splits"}, "tuning");
    cfg.tuning_splits = get_count(t, "splits", "tuning", 10);
    if (t.contains("grid")) {
      const auto& g = t.at("grid");
      if (g.is_string()) {
        if (g.get<std::string>() != "default") throw Error(ErrorCode::ConfigError, "tuning.grid: expected \"default\" or a list");
        cfg.tuning_grid = default_boosting_grid();
      } else if (g.is_array()) {
        for (std::size_t k = 0; k < g.size(); ++k) {
          cfg.tuning_grid.push_back(parse_learner(g[k], "tuning.grid[" + std::to_string(k) + "]"));
        }
      } else {
        throw Error(ErrorCode::ConfigError, "tuning.grid: expected \"default\" or a list");
      }
    }
  }
  if (j.contains("sensitivity")) {
    const auto& s = j.at("sensitivity");
    reject_unknown(s, {"gamma", "tau0", "restarts", "max_iterations", "step_tolerance", "corner_oracle_limit",
                       "compute_value", "gamma_max", "tolerance"},
                   "sensitivity");
    SensitivitySection sec;
    sec.gamma = get_field<double>(s, "gamma", "sensitivity", sec.gamma);
    sec.tau0 = get_field<double>(s, "tau0", "sensitivity", sec.tau0);
    sec.restarts = get_count(s, "restarts", "sensitivity", sec.restarts);
    sec.max_iterations = get_count(s, "max_iterations", "sensitivity", sec.max_iterations);
    sec.step_tolerance = get_field<double>(s, "step_tolerance", "sensitivity", sec.step_tolerance);
    sec.corner_oracle_limit = get_count(s, "corner_oracle_limit", "sensitivity", sec.corner_oracle_limit);
    sec.compute_value = get_field<bool>(s, "compute_value", "sensitivity", sec.compute_value);
    sec.gamma_max = get_field<double>(s, "gamma_max", "sensitivity", sec.gamma_max);
    sec.tolerance = get_field<double>(s, "tolerance", "sensitivity", sec.tolerance);
    cfg.sensitivity = sec;
  }
  if (j.contains("fisher")) {
    const auto& f = j.at("fisher");
    reject_unknown(f, {"statistic", "draws"}, "fisher");
    cfg.fisher.statistic = get_field<std::string>(f, "statistic", "fisher", cfg.fisher.statistic);
    cfg.fisher.draws = get_count(f, "draws", "fisher", cfg.fisher.draws);
  }
  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    reject_unknown(s, {"n_units", "effect", "propensity", "reps", "methods", "keep_replications"}, "simulation");
    auto& sim = cfg.simulation;
    sim.population.n_units = get_count(s, "n_units", "simulation", sim.population.n_units);
    sim.population.effect = effect_from_string(get_field<std::string>(s, "effect", "simulation", "effect1"));
    sim.population.propensity =
        propensity_setting_from_string(get_field<std::string>(s, "propensity", "simulation", "selection_model"));
    sim.reps = get_count(s, "reps", "simulation", sim.reps);
    sim.keep_replications = get_field<bool>(s, "keep_replications", "simulation", false);
    if (s.contains("methods")) {
      sim.methods.clear();
      for (const auto& m : s.at("methods")) {
        if (!m.is_string()) throw Error(ErrorCode::ConfigError, "simulation.methods: expected strings");
        sim.methods.push_back(method_from_string(m.get<std::string>()));
      }
    }
  }
  if (cfg.alpha_prime) cfg.regen.alpha_prime = cfg.alpha_prime;
  return cfg;
}

inline AnalysisConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline std::optional<double> read_optional(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace detail

inline Json to_json(const Interval& iv) { return Json::array({iv.lo, iv.hi}); }

/// {"components": [[lo, hi], ...], "measure": m}
inline Json to_json(const IntervalUnion& u) {
  Json a = Json::array();
  for (const auto& c : u.components()) a.push_back(to_json(c));
  return {{"components", a}, {"measure", u.measure()}};
}

inline Json to_json(const ExperimentReport& r) {
  Json j;
  j["population"] = {{"n_units", r.population.n_units},
                     {"effect", to_string(r.population.effect)},
                     {"propensity", to_string(r.population.propensity)},
                     {"seed", r.population.seed}};
  j["reps"] = r.reps;
  j["alpha"] = r.alpha;
  j["regen"] = {{"mode", r.regen_mode}, {"m_runs", r.m_runs}, {"master_seed", r.regen_seed}};
  j["learner"] = r.learner;
  j["tuning_auc"] = detail::optional_number(r.tuning_auc);
  j["tau"] = r.tau;
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"method", to_string(row.method)},
                    {"successes", row.successes},
                    {"failures", row.failures},
                    {"coverage", row.coverage},
                    {"bias", detail::optional_number(row.bias)},
                    {"mean_length", row.mean_length},
                    {"length_ratio", detail::optional_number(row.length_ratio)},
                    {"oba_coverage", detail::optional_number(row.oba_coverage)},
                    {"oba_length", detail::optional_number(row.oba_length)},
                    {"propagation_to_oba", detail::optional_number(row.propagation_to_oba)}});
  }
  j["rows"] = rows;
  if (!r.replications.empty()) {
    Json reps = Json::array();
    for (const auto& rep : r.replications) {
      Json methods = Json::array();
      for (const auto& m : rep.methods) {
        Json mj = {{"ok", m.ok}, {"point", m.point}, {"lo", m.lo}, {"hi", m.hi}, {"length", m.length},
                   {"covered", m.covered}};
        if (!m.ok) mj["error"] = m.error;
        methods.push_back(mj);
      }
      reps.push_back({{"index", rep.index}, {"n_treated", rep.n_treated}, {"methods", methods}});
    }
    j["replications"] = reps;
  }
  return j;
}

/// Reads the aggregate part of a report written by to_json.
inline ExperimentReport report_from_json(const Json& j) {
  try {
    ExperimentReport r;
    const auto& p = j.at("population");
    r.population.n_units = p.at("n_units").get<std::size_t>();
    r.population.effect = effect_from_string(p.at("effect").get<std::string>());
    r.population.propensity = propensity_setting_from_string(p.at("propensity").get<std::string>());
    r.population.seed = p.at("seed").get<std::uint64_t>();
    r.reps = j.at("reps").get<std::size_t>();
    r.alpha = j.at("alpha").get<double>();
    r.regen_mode = j.at("regen").at("mode").get<std::string>();
    r.m_runs = j.at("regen").at("m_runs").get<std::size_t>();
    r.regen_seed = j.at("regen").at("master_seed").get<std::uint64_t>();
    r.learner = j.at("learner").get<std::string>();
    r.tuning_auc = detail::read_optional(j, "tuning_auc");
    r.tau = j.at("tau").get<double>();
    for (const auto& rj : j.at("rows")) {
      MethodRow row;
      row.method = method_from_string(rj.at("method").get<std::string>());
      row.successes = rj.at("successes").get<std::size_t>();
      row.failures = rj.at("failures").get<std::size_t>();
      row.coverage = rj.at("coverage").get<double>();
      row.bias = detail::read_optional(rj, "bias");
      row.mean_length = rj.at("mean_length").get<double>();
      row.length_ratio = detail::read_optional(rj, "length_ratio");
      row.oba_coverage = detail::read_optional(rj, "oba_coverage");
      row.oba_length = detail::read_optional(rj, "oba_length");
      row.propagation_to_oba = detail::read_optional(rj, "propagation_to_oba");
      r.rows.push_back(row);
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("malformed report: ") + e.what());
  }
}

inline void write_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

inline void write_report(const ExperimentReport& r, const std::string& path) { write_json(to_json(r), path); }

inline ExperimentReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open report '" + path + "'");
  try {
    return report_from_json(Json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report is not valid JSON: ") + e.what());
  }
}

/// One row per method; absent values are blank cells.
inline std::string report_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto opt = [&os](const std::optional<double>& v) {
    if (v) os << *v;
  };
  os << "method,successes,failures,coverage,bias,mean_length,length_ratio,oba_coverage,oba_length,"
        "propagation_to_oba\n";
  for (const auto& row : r.rows) {
    os << to_string(row.method) << ',' << row.successes << ',' << row.failures << ',' << row.coverage << ',';
    opt(row.bias);
    os << ',' << row.mean_length << ',';
    opt(row.length_ratio);
    os << ',';
    opt(row.oba_coverage);
    os << ',';
    opt(row.oba_length);
    os << ',';
    opt(row.propagation_to_oba);
    os << '\n';
  }
  return os.str();
}

inline Json to_json(const PropagatedSet& s) {
  Json j;
  j["confidence_set"] = to_json(s.confidence_set);
  j["level_alpha"] = s.level_alpha;
  Json runs = Json::array();
  for (std::size_t m = 0; m < s.run_intervals.size(); ++m) {
    runs.push_back({{"point", s.run_points[m]}, {"interval", to_json(s.run_intervals[m])}});
  }
  j["runs"] = runs;
  j["used_runs"] = s.used_runs;
  j["restricted_fallback"] = s.restricted_fallback;
  j["warnings"] = s.warnings;
  return j;
}

}  // namespace psprop
