#include "peloton/experiment.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "peloton/errors.hpp"
#include "peloton/metrics.hpp"

using namespace peloton;
namespace fs = std::filesystem;

namespace {

experiment::ExperimentConfig strategy_config(std::uint64_t seed) {
  experiment::ExperimentConfig config;
  config.sim.seed = seed;
  config.sim.n_skaters = 20;
  config.sim.energy_budget = 50000.0;
  config.sim.draft_drag_multiplier = 0.5;
  config.sim.ability_spread = 0.001;
  config.n_races = 9;
  config.scenario = experiment::Scenario::strategy_dominant;
  return config;
}

}  // namespace

TEST_CASE("experiment shape mirrors the paper's analysis design") {
  const auto result = experiment::run_experiment(strategy_config(4001), 2);
  const int kept = 9 - static_cast<int>(result.excluded_race_ids.size());
  REQUIRE(result.eq1.fit.has_value());
  REQUIRE(result.eq2.fit.has_value());
  REQUIRE(result.eq3.fit.has_value());
  // eq1: top-3 finishers x 3 laps per kept race.
  CHECK(result.eq1.fit->n == kept * 9);
  CHECK(result.eq1.fit->coefficients.size() == 3);
  CHECK(result.eq1.fit->coefficients[1].name == "lap_to_finish");
  // eq2: one row per skater per kept race.
  CHECK(result.eq2.fit->n == static_cast<int>(result.metrics_rows.size()));
  CHECK(result.eq2.fit->coefficients.size() == 2);
  CHECK(result.eq3.fit->coefficients.size() == 2);
  CHECK(result.time_trial_best.size() == 20);
  CHECK(result.per_race_pearson.size() == static_cast<size_t>(kept));
}

TEST_CASE("experiments are reproducible and parallelism preserves results") {
  const auto a = experiment::run_experiment(strategy_config(4242), 1);
  const auto b = experiment::run_experiment(strategy_config(4242), 4);
  REQUIRE(a.eq2.fit.has_value());
  REQUIRE(b.eq2.fit.has_value());
  CHECK(a.eq2.fit->coefficients[1].estimate == b.eq2.fit->coefficients[1].estimate);
  CHECK(a.metrics_rows.size() == b.metrics_rows.size());
  for (size_t i = 0; i < a.metrics_rows.size(); ++i) {
    CHECK(a.metrics_rows[i].skater_id == b.metrics_rows[i].skater_id);
    CHECK(a.metrics_rows[i].tau == b.metrics_rows[i].tau);
  }
}

TEST_CASE("null scenario: identical agents fabricate no drafting effect") {
  // With identical agents and a non-binding budget the pipeline must not
  // produce the paper-direction (positive) tau effect; eq3 is degenerate
  // because the synthetic time-trial covariate is constant.
  int positive_significant = 0;
  int eq3_degenerate = 0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    experiment::ExperimentConfig config;
    config.sim.seed = 6100 + s;
    config.sim.energy_budget = 1e9;
    config.n_races = 9;
    config.scenario = experiment::Scenario::null_identical;
    const auto result = experiment::run_experiment(config, 4);
    if (result.eq2.fit) {
      const auto& slope = result.eq2.fit->coefficients[1];
      if (slope.estimate > 0 && slope.p < 0.05) ++positive_significant;
    }
    if (!result.eq3.fit) ++eq3_degenerate;
  }
  CHECK(positive_significant == 0);
  CHECK(eq3_degenerate == seeds);
}

TEST_CASE("eq3 dataset drops unmatched skaters and rejects an empty join") {
  std::vector<metrics::MetricsRow> rows(2);
  rows[0] = {"r", "a", 5.0, 0.0, 1, 1, 1, 1, 0.25, false};
  rows[1] = {"r", "b", 9.0, 0.0, 2, 2, 2, 2, 0.5, false};
  std::map<std::string, double> trial{{"a", 240.0}};
  const auto data = experiment::build_eq3_dataset(rows, trial);
  CHECK(data.response.size() == 1);
  CHECK_THROWS_WITH_AS(experiment::build_eq3_dataset(rows, {}), doctest::Contains("empty join"),
                       ValidationError);
}

TEST_CASE("time-trial CSV round trip and header variants") {
  std::map<std::string, double> best{{"a", 241.5}, {"b", 250.25}};
  std::ostringstream out;
  experiment::write_time_trial_csv(best, out);
  std::istringstream in(out.str());
  const auto [column, values] = experiment::read_time_trial_csv(in);
  CHECK(column == "best_time");
  CHECK(values.at("a") == doctest::Approx(241.5));

  std::istringstream std_in("skater_id,standardized_best\na,-1.25\n");
  const auto [col2, vals2] = experiment::read_time_trial_csv(std_in);
  CHECK(col2 == "standardized_best");
  CHECK(vals2.at("a") == doctest::Approx(-1.25));

  std::istringstream bad("skater,stuff\n");
  CHECK_THROWS_AS(experiment::read_time_trial_csv(bad), ValidationError);
}

// ---------------------------------------------------------------------------
// CLI integration (drives the installed binary through a shell)
// ---------------------------------------------------------------------------

namespace {

struct CliResult {
  int exit_code = -1;
  std::string stdout_text;
};

std::string binary_path() {
  if (const char* bin = std::getenv("PELOTON_BIN")) return bin;
  // Fallback for direct invocation: the CLI sits next to the test tree.
  const fs::path sibling = fs::read_symlink("/proc/self/exe").parent_path().parent_path() /
                           "tools" / "peloton";
  REQUIRE_MESSAGE(fs::exists(sibling), "PELOTON_BIN must point at the peloton binary");
  return sibling.string();
}

CliResult run_cli(const std::string& args, const fs::path& dir) {
  const fs::path out_file = dir / "stdout.txt";
  const std::string cmd =
      binary_path() + " " + args + " > " + out_file.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult result;
  result.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(out_file);
  std::stringstream buffer;
  buffer << in.rdbuf();
  result.stdout_text = buffer.str();
  return result;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("peloton_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("cli: simulate twice produces byte-identical artifacts") {
  TempDir tmp;
  const auto first =
      run_cli("simulate --races 2 --seed 42 --out " + (tmp.path / "a").string(), tmp.path);
  REQUIRE(first.exit_code == 0);
  const auto second =
      run_cli("simulate --races 2 --seed 42 --out " + (tmp.path / "b").string(), tmp.path);
  REQUIRE(second.exit_code == 0);
  for (const char* name : {"race_001.jsonl", "race_002.jsonl", "timetrials.csv",
                           "manifest.json"}) {
    CHECK(slurp(tmp.path / "a" / name) == slurp(tmp.path / "b" / name));
  }
}

TEST_CASE("cli: end-to-end simulate, analyze, fit") {
  TempDir tmp;
  const fs::path logs = tmp.path / "logs";
  REQUIRE(run_cli("simulate --races 3 --seed 7 --out " + logs.string(), tmp.path).exit_code == 0);

  const fs::path metrics_csv = tmp.path / "metrics.csv";
  const auto analyze =
      run_cli("analyze --logs " + logs.string() + " --out " + metrics_csv.string(), tmp.path);
  REQUIRE(analyze.exit_code == 0);
  CHECK(fs::exists(metrics_csv));
  CHECK(fs::exists(tmp.path / "metrics.csv.excluded.json"));
  CHECK(fs::exists(tmp.path / "metrics.csv.ranks.csv"));

  const fs::path report = tmp.path / "fit_eq2.json";
  const auto fit = run_cli("fit --metrics " + metrics_csv.string() + " --model eq2 --out " +
                               report.string(),
                           tmp.path);
  REQUIRE(fit.exit_code == 0);
  const auto parsed = nlohmann::json::parse(slurp(report));
  CHECK(parsed["model"] == "eq2");
  CHECK(parsed["coefficients"].size() == 2);
  CHECK(parsed["n"].get<int>() > 0);

  const auto fit3 = run_cli("fit --metrics " + metrics_csv.string() + " --model eq3 --timetrials " +
                                (logs / "timetrials.csv").string(),
                            tmp.path);
  CHECK(fit3.exit_code == 0);
}

TEST_CASE("cli: a larger gap threshold weakly increases every tau") {
  TempDir tmp;
  const fs::path logs = tmp.path / "logs";
  REQUIRE(run_cli("simulate --races 2 --seed 11 --out " + logs.string(), tmp.path).exit_code ==
          0);
  const fs::path narrow = tmp.path / "narrow.csv";
  const fs::path wide = tmp.path / "wide.csv";
  REQUIRE(run_cli("analyze --logs " + logs.string() + " --out " + narrow.string() +
                      " --gap-threshold 0.2",
                  tmp.path).exit_code == 0);
  REQUIRE(run_cli("analyze --logs " + logs.string() + " --out " + wide.string() +
                      " --gap-threshold 0.3",
                  tmp.path).exit_code == 0);
  std::ifstream nin(narrow), win(wide);
  const auto nrows = metrics::read_metrics_csv(nin);
  const auto wrows = metrics::read_metrics_csv(win);
  REQUIRE(nrows.size() == wrows.size());
  for (size_t i = 0; i < nrows.size(); ++i) {
    CHECK(wrows[i].tau <= nrows[i].tau + 1e-9);
  }
}

TEST_CASE("cli: equilibrium subcommand prints the mixed equilibrium") {
  TempDir tmp;
  const auto ok = run_cli("equilibrium 3 2 1 0", tmp.path);
  CHECK(ok.exit_code == 0);
  CHECK(ok.stdout_text.find("x* = 0.5") != std::string::npos);

  const auto ok2 = run_cli("equilibrium 2 1.5 1 0", tmp.path);
  CHECK(ok2.exit_code == 0);
  CHECK(ok2.stdout_text.find("0.666667") != std::string::npos);

  const auto bad = run_cli("equilibrium 5 3 0 1", tmp.path);
  CHECK(bad.exit_code == 1);
  CHECK(bad.stdout_text.find("S > P") != std::string::npos);
}

TEST_CASE("cli: exit codes distinguish validation from I/O errors") {
  TempDir tmp;
  fs::create_directories(tmp.path / "empty");
  const auto no_logs =
      run_cli("analyze --logs " + (tmp.path / "empty").string() + " --out " +
                  (tmp.path / "m.csv").string(),
              tmp.path);
  CHECK(no_logs.exit_code == 1);

  const auto missing = run_cli("fit --metrics " + (tmp.path / "nope.csv").string() +
                                   " --model eq2",
                               tmp.path);
  CHECK(missing.exit_code == 2);

  const auto bad_model = run_cli("fit --metrics " + (tmp.path / "nope.csv").string() +
                                     " --model eq9",
                                 tmp.path);
  CHECK(bad_model.exit_code != 0);
}

TEST_CASE("cli: report writes fits and a reproducible summary") {
  TempDir tmp;
  const fs::path out = tmp.path / "report";
  const auto res = run_cli(
      "report --races 3 --seed 5 --scenario strategy --out " + out.string() + " --jobs 2",
      tmp.path);
  REQUIRE(res.exit_code == 0);
  CHECK(fs::exists(out / "report.json"));
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "timetrials.csv"));
  CHECK(fs::exists(out / "fit_eq2.json"));
  const auto report = nlohmann::json::parse(slurp(out / "report.json"));
  CHECK(report["seed"] == 5);
  CHECK(report["models"].contains("eq2"));

  const fs::path out2 = tmp.path / "report2";
  REQUIRE(run_cli("report --races 3 --seed 5 --scenario strategy --out " + out2.string() +
                      " --jobs 1",
                  tmp.path).exit_code == 0);
  CHECK(slurp(out / "report.json") == slurp(out2 / "report.json"));
}
