#include <catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "psprop/cli.hpp"

using namespace psprop;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

bool has_code(const std::function<void()>& f, ErrorCode code, const std::string& needle = "") {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == code && std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

Dataset parse(const std::string& text, Problem p) {
  std::istringstream in(text);
  return parse_csv(in, p);
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("psprop_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string write_file(const std::string& name, const std::string& text) {
  const auto path = scratch() / name;
  std::ofstream(path) << text;
  return path.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "psprop_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A small observational data set with a logistic design.
std::string ate_csv(std::size_t n, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::ostringstream os;
  os << std::setprecision(17) << "z,y,x1,x2\n";
  for (std::size_t i = 0; i < n; ++i) {
    const double x1 = rng.standard_normal(), x2 = rng.standard_normal();
    const int z = rng.bernoulli(sigmoid(0.4 * x1 - 0.3 * x2));
    const double y = 1.0 + x1 + (z ? 2.0 : 0.0) + 0.5 * rng.standard_normal();
    os << z << ',' << y << ',' << x1 << ',' << x2 << '\n';
  }
  return os.str();
}

}  // namespace

TEST_CASE("csv parsing examples") {
  const auto ds = parse("z,y,x1\n1,4,0\n0,2,0\n", Problem::Ate);
  CHECK(ds.size() == 2);
  CHECK(ds.z == BitVector{1, 0});
  CHECK(ds.y == std::vector<double>{4, 2});
  CHECK(ds.x.cols() == 1);

  const auto sv = parse("z,y,x1\n0,,1.5\n1,2,0.5\n", Problem::Survey);
  CHECK_FALSE(sv.is_observed(0));
  CHECK(sv.is_observed(1));
  CHECK(sv.x(0, 0) == 1.5);

  CHECK(has_code([] { parse("z,y,x1\n1,,1.5\n", Problem::Survey); }, ErrorCode::InconsistentRow));
  CHECK(has_code([] { parse("z,y,x1\n0,,1.5\n", Problem::Ate); }, ErrorCode::InconsistentRow));
  CHECK(has_code([] { parse("z,x1\n1,2\n", Problem::Ate); }, ErrorCode::SchemaError, "'y'"));
  CHECK(has_code([] { parse("z,y,x1\n1,abc,2\n", Problem::Ate); }, ErrorCode::ParseError, "row 2"));
  CHECK(has_code([] { parse("z,y,x1\n2,1,2\n", Problem::Ate); }, ErrorCode::ParseError));
  CHECK(has_code([] { parse("z,y,x1\n1,1\n", Problem::Ate); }, ErrorCode::ParseError));
  CHECK(has_code([] { parse("z,y,y\n1,1,1\n", Problem::Ate); }, ErrorCode::SchemaError));
  CHECK(has_code([] { parse("", Problem::Ate); }, ErrorCode::SchemaError));
  CHECK(has_code([] { parse("z,y,x1\n1,1,2\n", Problem::Missing); }, ErrorCode::SchemaError, "treat"));

  const auto did = parse("z,y0,y1,x1\n1,1,6,0\n0,1,3,0\n", Problem::Did);
  CHECK(did.y == std::vector<double>{6, 3});
  CHECK(*did.baseline == std::vector<double>{1, 1});
  CHECK(did_estimate(did, PropensityVector({0.5, 0.5})).point == Approx(3.0));

  const auto miss = parse("z,y,treat,x1\n1,3,1,0\n1,1,0,0\n", Problem::Missing);
  CHECK(missing_outcome_estimate(miss, PropensityVector({1, 1})).point == 2.0);
  CHECK(has_code([] { load_csv("/nonexistent/file.csv", Problem::Ate); }, ErrorCode::IoError));
}

TEST_CASE("config loader validates fields") {
  const auto ok = parse_config(Json::parse(R"({"problem": "ate", "alpha": 0.1, "regen": {"mode": "parametric", "m_runs": 5},
      "union": "restricted", "alpha_prime": 0.02, "learner": {"kind": "boosted", "rounds": 30, "max_depth": 2},
      "simulation": {"n_units": 50, "reps": 3, "methods": ["oracle"]}})"));
  CHECK(ok.alpha == 0.1);
  CHECK(ok.regen.mode == RegenMode::Parametric);
  CHECK(ok.regen.m_runs == 5);
  CHECK(ok.restricted);
  CHECK(*ok.alpha_prime == 0.02);
  CHECK(ok.regen.learner_a.boost().rounds == 30);
  CHECK(ok.simulation.methods == std::vector<Method>{Method::Oracle});

  CHECK(has_code([] { parse_config(Json::parse(R"({"alhpa": 0.1})")); }, ErrorCode::ConfigError, "alhpa: unknown field"));
  CHECK(has_code([] { parse_config(Json::parse(R"({"regen": {"runs": 3}})")); }, ErrorCode::ConfigError, "regen.runs"));
  CHECK(has_code([] { parse_config(Json::parse(R"({"alpha": "high"})")); }, ErrorCode::ConfigError, "alpha: wrong type"));
  CHECK(has_code([] { parse_config(Json::parse(R"({"learner": {"kind": "boosted", "rounds": 0}})")); },
                 ErrorCode::ConfigError, "learner"));
  CHECK(has_code([] { parse_config(Json::parse(R"({"tuning": {"grid": "huge"}})")); }, ErrorCode::ConfigError, "tuning.grid"));
  CHECK(parse_config(Json::parse(R"({"tuning": {"grid": "default"}})")).tuning_grid.size() == 324);

  auto bad = parse_config(Json::parse(R"({"alpha": 0.05, "alpha_prime": 0.08})"));
  CHECK(has_code([&] { bad.validate(); }, ErrorCode::ConfigError, "alpha_prime"));
  CHECK(has_code([] { load_config("/nonexistent.json"); }, ErrorCode::ConfigError));
  const auto broken = write_file("broken.json", "{ not json");
  CHECK(has_code([&] { load_config(broken); }, ErrorCode::ConfigError));
}

TEST_CASE("exit codes") {
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({}).code == 2);
  const auto usage = cli({"frobnicate"});
  CHECK(usage.err.find("propagate") != std::string::npos);
  CHECK(cli({"propagate", "--input", "/nonexistent.csv"}).code == 3);
  CHECK(cli({"propagate"}).code == 2);
  CHECK(cli({"propagate", "--input", "x.csv", "--mode", "bootstrap"}).code == 2);
  CHECK(cli({"propagate", "--input", "x.csv", "--alpha", "1.5"}).code == 2);

  const auto sep = write_file("separated.csv", "z,y,x1\n1,1,1\n1,1,2\n1,1,3\n0,1,-1\n0,1,-2\n0,1,-3\n");
  const auto r = cli({"fit", "--input", sep});
  CHECK(r.code == 4);
  CHECK(r.err.find("Separation") != std::string::npos);

  const auto blank = write_file("blank.csv", "z,y,x1\n1,,1\n0,2,2\n");
  CHECK(cli({"propagate", "--input", blank, "--problem", "survey"}).code == 3);
}

TEST_CASE("standalone binary maps failures to exit codes") {
  auto status = [](const std::string& args) {
    const int raw = std::system((std::string(PSPROP_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WEXITSTATUS(raw);
  };
  CHECK(status("frobnicate") == 2);
  CHECK(status("--help") == 0);
  CHECK(status("propagate --input /nonexistent.csv") == 3);
}

TEST_CASE("fit and propagate happy paths") {
  const auto data = write_file("ate.csv", ate_csv(300, 1));
  const auto fit_out = (scratch() / "fit.json").string();
  const auto f = cli({"fit", "--input", data, "--out", fit_out});
  REQUIRE(f.code == 0);
  const auto fj = Json::parse(slurp(fit_out));
  CHECK(fj["coefficients"].size() == 3);
  CHECK(fj["coefficients"][1]["term"] == "x1");

  const auto prop_out = (scratch() / "prop.json").string();
  const auto p = cli({"propagate", "--input", data, "--mode", "parametric", "--m-runs", "100", "--alpha", "0.05",
                      "--out", prop_out});
  REQUIRE(p.code == 0);
  const auto pj = Json::parse(slurp(prop_out));
  REQUIRE(pj.contains("confidence_set"));
  CHECK(pj["confidence_set"]["components"].size() >= 1);
  CHECK(pj["runs"].size() == 100);
  CHECK(pj["confidence_set"]["measure"].get<double>() > 0.0);

  const auto r = cli({"propagate", "--input", data, "--mode", "parametric", "--union", "restricted", "--m-runs", "50",
                      "--out", prop_out});
  REQUIRE(r.code == 0);
  CHECK(Json::parse(slurp(prop_out))["level_alpha"].get<double>() == Approx(0.04));
}

TEST_CASE("fisher and sensitivity subcommands") {
  const auto data = write_file("ate_small.csv", ate_csv(60, 2));
  const auto cfg = write_file("fs.json", R"({"problem": "ate", "regen": {"mode": "crossfit", "m_runs": 4},
      "fisher": {"statistic": "abs_difference_in_means", "draws": 200},
      "sensitivity": {"gamma": 1.3, "tau0": 0.0, "compute_value": true}})");
  const auto out = (scratch() / "fs_out.json").string();
  const auto f = cli({"fisher", "--config", cfg, "--input", data, "--out", out});
  REQUIRE(f.code == 0);
  const auto fj = Json::parse(slurp(out));
  CHECK(fj["per_run_p_values"].size() == 4);
  CHECK(fj["p_value"].get<double>() > 0.0);

  const auto s = cli({"sensitivity", "--config", cfg, "--input", data, "--out", out});
  REQUIRE(s.code == 0);
  const auto sj = Json::parse(slurp(out));
  CHECK(sj["gamma"] == 1.3);
  CHECK(sj["membership"].is_boolean());
  CHECK(sj["per_run_d_star"].size() == 4);
  CHECK(sj.contains("gamma_star"));
  CHECK(sj["sensitivity_set"].contains("measure"));
}

TEST_CASE("json output is byte-identical across thread counts") {
  const auto data = write_file("ate_threads.csv", ate_csv(120, 3));
  const auto a = (scratch() / "t1.json").string(), b = (scratch() / "t4.json").string();
  REQUIRE(cli({"propagate", "--input", data, "--mode", "crossfit", "--m-runs", "12", "--seed", "5", "--threads", "1",
               "--out", a}).code == 0);
  REQUIRE(cli({"propagate", "--input", data, "--mode", "crossfit", "--m-runs", "12", "--seed", "5", "--threads", "4",
               "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));

  const auto cfg = write_file("sim.json", R"({"regen": {"mode": "crossfit", "m_runs": 3},
      "learner": {"kind": "boosted", "rounds": 10, "max_depth": 2},
      "simulation": {"n_units": 100, "reps": 4, "keep_replications": true}})");
  REQUIRE(cli({"simulate", "--config", cfg, "--seed", "2", "--threads", "1", "--out", a}).code == 0);
  REQUIRE(cli({"simulate", "--config", cfg, "--seed", "2", "--threads", "3", "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("simulate writes csv and a report that round-trips") {
  const auto cfg = write_file("sim_rt.json", R"({"regen": {"mode": "crossfit", "m_runs": 3},
      "learner": {"kind": "glm"}, "simulation": {"n_units": 150, "reps": 5}})");
  const auto json_out = (scratch() / "sim_rt_out.json").string();
  const auto csv_out = (scratch() / "sim_rt_out.csv").string();
  const auto r = cli({"simulate", "--config", cfg, "--out", json_out, "--csv", csv_out});
  REQUIRE(r.code == 0);
  CHECK(r.out == slurp(csv_out));
  CHECK(r.out.rfind("method,successes,failures,coverage", 0) == 0);

  const auto back = read_report(json_out);
  const auto orig = report_from_json(Json::parse(slurp(json_out)));
  REQUIRE(back.rows.size() == 3);
  // write again and reload: aggregates must survive to 1e-12
  const auto again = (scratch() / "sim_rt_again.json").string();
  write_report(back, again);
  const auto back2 = read_report(again);
  for (std::size_t k = 0; k < back.rows.size(); ++k) {
    CHECK(std::abs(back2.rows[k].coverage - orig.rows[k].coverage) <= 1e-12);
    CHECK(std::abs(back2.rows[k].mean_length - orig.rows[k].mean_length) <= 1e-12);
    CHECK(back2.rows[k].bias.has_value() == orig.rows[k].bias.has_value());
    if (orig.rows[k].bias) CHECK(std::abs(*back2.rows[k].bias - *orig.rows[k].bias) <= 1e-12);
  }
  CHECK(back2.tau == back.tau);
}

TEST_CASE("in-memory report round trip") {
  ExperimentConfig ec;
  ec.population.n_units = 100;
  ec.reps = 4;
  ec.regen.m_runs = 3;
  const auto rep = run_experiment(ec);
  const auto path = (scratch() / "mem.json").string();
  write_report(rep, path);
  const auto back = read_report(path);
  CHECK(back.reps == rep.reps);
  CHECK(back.learner == rep.learner);
  for (std::size_t k = 0; k < rep.rows.size(); ++k) {
    CHECK(std::abs(back.rows[k].coverage - rep.rows[k].coverage) <= 1e-12);
    CHECK(std::abs(back.rows[k].mean_length - rep.rows[k].mean_length) <= 1e-12 * std::max(1.0, rep.rows[k].mean_length));
    if (rep.rows[k].length_ratio)
      CHECK(std::abs(*back.rows[k].length_ratio - *rep.rows[k].length_ratio) <= 1e-12);
  }
  CHECK(has_code([] { report_from_json(Json::parse(R"({"reps": 1})")); }, ErrorCode::SchemaError));
}

TEST_CASE("shipped configs load") {
  const std::string root = PSPROP_SOURCE_DIR;
  for (const char* name : {"table1_e1p1", "table1_e1p2"}) {
    const auto cfg = load_config(root + "/configs/" + name + ".json");
    CHECK(cfg.simulation.population.n_units == 1000);
    CHECK(cfg.simulation.reps == 200);
    CHECK(cfg.regen.m_runs == 100);
    CHECK(cfg.regen.mode == RegenMode::Crossfit);
    CHECK(cfg.tuning_grid.size() == 324);
    CHECK(cfg.tuning_splits == 10);
  }
  CHECK(load_config(root + "/configs/table1_e1p2.json").simulation.population.propensity ==
        PropensitySetting::LogisticModel);
  const auto a = load_config(root + "/configs/analysis_example.json");
  CHECK(a.regen.mode == RegenMode::Parametric);
  CHECK(load_csv(root + "/data/ate_example.csv", Problem::Ate).size() == 400);
  CHECK(load_csv(root + "/data/survey_example.csv", Problem::Survey).size() == 400);
}
