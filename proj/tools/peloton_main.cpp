// peloton: mass start race simulation and drafting analytics.
//
// Subcommands: simulate, analyze, fit, equilibrium, report.
// Exit codes: 0 success, 1 validation error, 2 I/O error, 3 non-convergence.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "peloton/dilemma.hpp"
#include "peloton/errors.hpp"
#include "peloton/experiment.hpp"
#include "peloton/metrics.hpp"
#include "peloton/racelog.hpp"
#include "peloton/stats.hpp"
#include "peloton/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 0;  // 0 = available parallelism
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("PELOTON_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw peloton::ValidationError("PELOTON_SEED is not a valid integer: " + std::string(env));
    }
  }
  return 42;
}

int resolve_jobs(int jobs) {
  if (jobs > 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

peloton::dilemma::SimConfig load_config(const std::string& path, std::uint64_t seed) {
  peloton::dilemma::SimConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw peloton::IoError("cannot read config file: " + path);
    config = peloton::dilemma::parse_sim_config(in);
  }
  config.seed = seed;
  return config;
}

peloton::racelog::LogFormat format_from_string(const std::string& name) {
  if (name == "csv") return peloton::racelog::LogFormat::csv;
  if (name == "jsonl") return peloton::racelog::LogFormat::jsonl;
  throw peloton::ValidationError("unknown format '" + name + "' (expected csv or jsonl)");
}

std::string serialize_log(const peloton::racelog::RaceLog& log,
                          peloton::racelog::LogFormat format,
                          const peloton::racelog::Provenance& prov) {
  std::ostringstream out;
  peloton::racelog::serialize_race_log(log, out, format, &prov);
  return out.str();
}

peloton::racelog::RaceLog load_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw peloton::IoError("cannot read log file: " + path.string());
  const std::string ext = path.extension().string();
  peloton::racelog::LogFormat format;
  if (ext == ".csv") {
    format = peloton::racelog::LogFormat::csv;
  } else if (ext == ".jsonl") {
    format = peloton::racelog::LogFormat::jsonl;
  } else {
    throw peloton::ValidationError("unrecognized log extension: " + path.string());
  }
  try {
    return peloton::racelog::parse_race_log(in, format);
  } catch (const peloton::ValidationError& e) {
    throw peloton::ValidationError(path.string() + ": " + e.what());
  }
}

int cmd_simulate(const CommonOpts& common, int n_races, const std::string& out_dir,
                 const std::string& format_name, const std::string& scenario_name) {
  const std::uint64_t seed = resolve_seed(common.seed);
  peloton::dilemma::SimConfig sim = load_config(common.config_path, seed);
  const auto format = format_from_string(format_name);
  const auto scenario = peloton::experiment::scenario_from_string(scenario_name);
  const std::string config_hash = peloton::fnv1a_hex(peloton::dilemma::canonical_config_string(sim));

  peloton::experiment::ExperimentConfig exp;
  exp.sim = sim;
  exp.n_races = n_races;
  exp.scenario = scenario;

  fs::create_directories(out_dir);
  const auto population = peloton::experiment::make_population(sim, scenario);

  peloton::racelog::Provenance prov{std::string(peloton::kToolVersion), std::to_string(seed),
                                    config_hash};
  json manifest;
  manifest["tool_version"] = std::string(peloton::kToolVersion);
  manifest["seed"] = seed;
  manifest["config_hash"] = config_hash;
  manifest["scenario"] = scenario_name;
  manifest["format"] = format_name;
  json files = json::array();

  std::map<std::string, double> best_times;
  for (int i = 0; i < n_races; ++i) {
    peloton::dilemma::SimConfig race_config = sim;
    race_config.seed = peloton::derive_seed(seed, 100 + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "race_%03d", i + 1);
    const auto result = peloton::dilemma::simulate_race(race_config, population, name);
    const std::string ext = format == peloton::racelog::LogFormat::csv ? ".csv" : ".jsonl";
    const fs::path file = fs::path(out_dir) / (std::string(name) + ext);
    peloton::atomic_write_file(file.string(), serialize_log(result.log, format, prov));
    files.push_back({{"race_id", name}, {"file", file.filename().string()},
                     {"seed", race_config.seed}});
    for (const auto& s : result.skaters) {
      auto it = best_times.find(s.skater_id);
      if (it == best_times.end() || s.best_time < it->second) best_times[s.skater_id] = s.best_time;
    }
  }
  manifest["files"] = std::move(files);

  std::ostringstream tt;
  tt << "# peloton " << peloton::kToolVersion << " seed=" << seed << " config=" << config_hash
     << "\n";
  peloton::experiment::write_time_trial_csv(best_times, tt);
  peloton::atomic_write_file((fs::path(out_dir) / "timetrials.csv").string(), tt.str());
  peloton::atomic_write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");

  std::cout << "wrote " << n_races << " race log(s), timetrials.csv and manifest.json to "
            << out_dir << "\n";
  return 0;
}

int cmd_analyze(const std::string& logs_dir, const std::string& out_csv, double gap_threshold,
                double breakaway_gap) {
  std::vector<fs::path> paths;
  if (!fs::is_directory(logs_dir)) throw peloton::IoError("not a directory: " + logs_dir);
  for (const auto& entry : fs::directory_iterator(logs_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    const std::string stem = entry.path().filename().string();
    if ((ext == ".csv" || ext == ".jsonl") && stem != "timetrials.csv" &&
        stem.rfind("metrics", 0) != 0) {
      paths.push_back(entry.path());
    }
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw peloton::ValidationError("no race logs found in " + logs_dir);

  peloton::metrics::DraftingParams params;
  params.gap_threshold = gap_threshold;

  std::vector<peloton::metrics::MetricsRow> rows;
  std::ostringstream ranks_csv;
  json excluded = json::array();
  for (const fs::path& path : paths) {
    const peloton::racelog::RaceLog log = load_log(path);
    {
      auto ranks = peloton::racelog::assign_finish_ranks(log);
      peloton::racelog::score_race(log, ranks);
      std::ostringstream one;
      peloton::racelog::write_rank_csv(log.meta.race_id, ranks, one);
      const std::string text = one.str();
      if (ranks_csv.tellp() == 0) {
        ranks_csv << text;
      } else {
        ranks_csv << text.substr(text.find('\n') + 1);  // skip repeated header
      }
    }
    if (peloton::metrics::classify_breakaway(log, breakaway_gap) ==
        peloton::metrics::RaceType::breakaway) {
      excluded.push_back({{"race_id", log.meta.race_id},
                          {"file", path.filename().string()},
                          {"reason", "breakaway: a top-3 gap stayed above " +
                                         peloton::format_fixed(breakaway_gap, 3) +
                                         " s through the closing window"}});
      continue;
    }
    const auto race_rows = peloton::metrics::compute_race_metrics(log, params, breakaway_gap);
    rows.insert(rows.end(), race_rows.begin(), race_rows.end());
  }

  std::ostringstream out;
  std::ostringstream prov;
  prov << "peloton " << peloton::kToolVersion << " gap_threshold="
       << peloton::format_fixed(gap_threshold, 3)
       << " breakaway_gap=" << peloton::format_fixed(breakaway_gap, 3);
  peloton::metrics::write_metrics_csv(rows, out, prov.str());
  peloton::atomic_write_file(out_csv, out.str());

  json sidecar;
  sidecar["tool_version"] = std::string(peloton::kToolVersion);
  sidecar["gap_threshold"] = gap_threshold;
  sidecar["breakaway_gap"] = breakaway_gap;
  sidecar["n_logs"] = paths.size();
  sidecar["excluded"] = std::move(excluded);
  peloton::atomic_write_file(out_csv + ".excluded.json", sidecar.dump(2) + "\n");
  peloton::atomic_write_file(out_csv + ".ranks.csv", ranks_csv.str());

  std::cout << "analyzed " << paths.size() << " race(s); " << sidecar["excluded"].size()
            << " excluded as breakaway; metrics rows: " << rows.size() << "\n";
  return 0;
}

void print_fit_summary(const peloton::stats::LmmFit& fit, const std::string& model) {
  std::cout << model << " (" << (fit.method == peloton::stats::FitMethod::reml ? "REML" : "ML")
            << ", n=" << fit.n << ", subjects=" << fit.n_subjects << ")\n";
  for (const auto& c : fit.coefficients) {
    std::cout << "  " << c.name << " = " << c.estimate << "  CI95 [" << c.ci_lower << ", "
              << c.ci_upper << "]  p = " << c.p << "\n";
  }
  std::cout << "  sigma2_subject = " << fit.sigma2_subject
            << "  sigma2_residual = " << fit.sigma2_residual << "  loglik = " << fit.loglik
            << "\n";
}

int cmd_fit(const std::string& metrics_path, const std::string& model,
            const std::string& timetrials_path, const std::string& method_name,
            const std::string& out_path) {
  std::ifstream in(metrics_path);
  if (!in) throw peloton::IoError("cannot read metrics CSV: " + metrics_path);
  const auto rows = peloton::metrics::read_metrics_csv(in);
  const auto method = method_name == "ml" ? peloton::stats::FitMethod::ml
                                          : peloton::stats::FitMethod::reml;

  peloton::stats::LmmDataset data;
  if (model == "eq1") {
    data = peloton::experiment::build_eq1_dataset(rows);
  } else if (model == "eq2") {
    data = peloton::experiment::build_eq2_dataset(rows);
  } else if (model == "eq3") {
    if (timetrials_path.empty()) {
      throw peloton::ValidationError("eq3 requires --timetrials");
    }
    std::ifstream tt(timetrials_path);
    if (!tt) throw peloton::IoError("cannot read time-trial CSV: " + timetrials_path);
    const auto [column, values] = peloton::experiment::read_time_trial_csv(tt);
    data = peloton::experiment::build_eq3_dataset(rows, values, column);
  } else {
    throw peloton::ValidationError("unknown model '" + model + "' (expected eq1, eq2 or eq3)");
  }

  const peloton::stats::LmmFit fit = peloton::stats::fit_lmm(data, method);
  const std::string report = peloton::stats::fit_report_json(
      fit, model,
      {{"tool_version", std::string(peloton::kToolVersion)}, {"metrics_csv", metrics_path}});
  if (out_path.empty()) {
    std::cout << report << "\n";
  } else {
    peloton::atomic_write_file(out_path, report + "\n");
    print_fit_summary(fit, model);
  }
  return 0;
}

int cmd_equilibrium(double t, double r, double s, double p, bool run_dynamics, double x0,
                    double step, int iterations, const std::string& trajectory_path) {
  peloton::dilemma::PayoffMatrix m{t, r, s, p};
  peloton::dilemma::validate_chicken(m);  // diagnostic names the violated inequality
  const double x_star = peloton::dilemma::nash_cooperation_fraction(m);
  const auto [pc, pd] = peloton::dilemma::expected_payoffs(m, x_star);
  std::cout << "chicken ordering T > R > S > P holds\n";
  std::cout << "mixed equilibrium cooperation fraction x* = " << x_star << "\n";
  std::cout << "expected payoffs at x*: cooperate = " << pc << ", defect = " << pd
            << " (indifference gap " << pc - pd << ")\n";
  if (run_dynamics || !trajectory_path.empty()) {
    const auto trajectory = peloton::dilemma::best_response_dynamics(m, x0, step, iterations);
    std::cout << "dynamics: x0 = " << x0 << ", final x = " << trajectory.back()
              << " after " << iterations << " iterations (|x - x*| = "
              << std::abs(trajectory.back() - x_star) << ")\n";
    if (!trajectory_path.empty()) {
      std::ostringstream out;
      out << "iteration,x\n";
      for (size_t i = 0; i < trajectory.size(); ++i) {
        out << i << ',' << peloton::format_fixed(trajectory[i], 9) << '\n';
      }
      peloton::atomic_write_file(trajectory_path, out.str());
    }
  }
  return 0;
}

int cmd_report(const CommonOpts& common, int n_races, const std::string& out_dir,
               const std::string& scenario_name, const std::string& method_name,
               const std::string& format_name) {
  const std::uint64_t seed = resolve_seed(common.seed);
  peloton::experiment::ExperimentConfig exp;
  exp.sim = load_config(common.config_path, seed);
  exp.n_races = n_races;
  exp.scenario = peloton::experiment::scenario_from_string(scenario_name);
  exp.method = method_name == "ml" ? peloton::stats::FitMethod::ml
                                   : peloton::stats::FitMethod::reml;
  const auto format = format_from_string(format_name);
  const std::string config_hash =
      peloton::fnv1a_hex(peloton::dilemma::canonical_config_string(exp.sim));

  const auto result = peloton::experiment::run_experiment(exp, resolve_jobs(common.jobs));

  fs::create_directories(out_dir);
  peloton::racelog::Provenance prov{std::string(peloton::kToolVersion), std::to_string(seed),
                                    config_hash};
  const fs::path logs_dir = fs::path(out_dir) / "logs";
  fs::create_directories(logs_dir);
  for (const auto& race : result.races) {
    const std::string ext = format == peloton::racelog::LogFormat::csv ? ".csv" : ".jsonl";
    peloton::atomic_write_file((logs_dir / (race.race_id + ext)).string(),
                               serialize_log(race.sim.log, format, prov));
  }

  std::ostringstream metrics_out;
  std::ostringstream prov_comment;
  prov_comment << "peloton " << peloton::kToolVersion << " seed=" << seed
               << " config=" << config_hash;
  peloton::metrics::write_metrics_csv(result.metrics_rows, metrics_out, prov_comment.str());
  peloton::atomic_write_file((fs::path(out_dir) / "metrics.csv").string(), metrics_out.str());

  std::ostringstream tt;
  tt << "# " << prov_comment.str() << "\n";
  peloton::experiment::write_time_trial_csv(result.time_trial_best, tt);
  peloton::atomic_write_file((fs::path(out_dir) / "timetrials.csv").string(), tt.str());

  json report;
  report["tool_version"] = std::string(peloton::kToolVersion);
  report["seed"] = seed;
  report["config_hash"] = config_hash;
  report["scenario"] = scenario_name;
  report["n_races"] = n_races;
  report["excluded_races"] = result.excluded_race_ids;
  json pearson = json::array();
  for (const auto& row : result.per_race_pearson) {
    pearson.push_back({{"race_id", row.race_id}, {"r", row.r}, {"p", row.p}, {"n", row.n}});
  }
  report["per_race_pearson_finish_rank_vs_tau"] = std::move(pearson);

  const std::map<std::string, std::string> fit_prov{
      {"tool_version", std::string(peloton::kToolVersion)},
      {"seed", std::to_string(seed)},
      {"config_hash", config_hash}};
  auto emit_fit = [&](const char* name, const peloton::experiment::ModelOutcome& outcome) {
    if (outcome.fit) {
      const std::string text = peloton::stats::fit_report_json(*outcome.fit, name, fit_prov);
      peloton::atomic_write_file((fs::path(out_dir) / ("fit_" + std::string(name) + ".json")).string(),
                                 text + "\n");
      report["models"][name] = json::parse(text);
      print_fit_summary(*outcome.fit, name);
    } else {
      report["models"][name] = {{"skipped", outcome.skip_reason}};
      std::cout << name << ": skipped (" << outcome.skip_reason << ")\n";
    }
  };
  emit_fit("eq1", result.eq1);
  emit_fit("eq2", result.eq2);
  emit_fit("eq3", result.eq3);

  peloton::atomic_write_file((fs::path(out_dir) / "report.json").string(), report.dump(2) + "\n");
  std::cout << "report written to " << out_dir << " (" << result.excluded_race_ids.size()
            << " race(s) excluded as breakaway)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mass start race simulation and drafting analytics"};
  app.set_version_flag("--version", std::string(peloton::kToolVersion));
  app.require_subcommand(1);

  CommonOpts common;

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate races and write race logs");
  int sim_races = 1;
  std::string sim_out;
  std::string sim_format = "jsonl";
  std::string sim_scenario = "strategy";
  sim->add_option("--config", common.config_path, "SimConfig key = value file");
  sim->add_option("--races", sim_races, "number of races")->check(CLI::PositiveNumber);
  sim->add_option("--seed", common.seed, "base seed (falls back to PELOTON_SEED, then 42)");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--format", sim_format, "log format: csv or jsonl");
  sim->add_option("--scenario", sim_scenario,
                  "population profile: as-configured, strategy, ability or null");
  sim->add_option("--jobs", common.jobs, "parallel races (0 = auto)");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "compute drafting metrics from race logs");
  std::string an_logs, an_out = "metrics.csv";
  double an_gap = 0.2, an_breakaway = 2.0;
  analyze->add_option("--logs", an_logs, "directory of race logs")->required();
  analyze->add_option("--out", an_out, "metrics CSV path");
  analyze->add_option("--gap-threshold", an_gap, "drafting gap threshold in seconds");
  analyze->add_option("--breakaway-gap", an_breakaway, "breakaway gap in seconds");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a random-intercept linear mixed model");
  std::string fit_metrics, fit_model, fit_tt, fit_method = "reml", fit_out;
  fit->add_option("--metrics", fit_metrics, "metrics CSV from analyze")->required();
  fit->add_option("--model", fit_model, "eq1, eq2 or eq3")->required();
  fit->add_option("--timetrials", fit_tt, "time-trial CSV (required for eq3)");
  fit->add_option("--method", fit_method, "reml or ml")
      ->check(CLI::IsMember({"reml", "ml"}));
  fit->add_option("--out", fit_out, "fit report JSON path (default: stdout)");

  // equilibrium
  auto* eq = app.add_subcommand("equilibrium", "skater's dilemma mixed equilibrium");
  double eq_t = 0, eq_r = 0, eq_s = 0, eq_p = 0, eq_x0 = 0.3, eq_step = 1e-3;
  int eq_iters = 10000;
  bool eq_dyn = false;
  std::string eq_traj;
  eq->add_option("T", eq_t, "temptation payoff")->required();
  eq->add_option("R", eq_r, "reward payoff")->required();
  eq->add_option("S", eq_s, "sucker payoff")->required();
  eq->add_option("P", eq_p, "punishment payoff")->required();
  eq->add_flag("--dynamics", eq_dyn, "run best-response dynamics");
  eq->add_option("--x0", eq_x0, "dynamics start point");
  eq->add_option("--step", eq_step, "dynamics step size");
  eq->add_option("--iterations", eq_iters, "dynamics iterations");
  eq->add_option("--trajectory", eq_traj, "write the trajectory CSV here");

  // report
  auto* rep = app.add_subcommand("report", "simulate, analyze and fit in one pass");
  int rep_races = 9;
  std::string rep_out, rep_scenario = "strategy", rep_method = "reml", rep_format = "jsonl";
  rep->add_option("--config", common.config_path, "SimConfig key = value file");
  rep->add_option("--races", rep_races, "number of races")->check(CLI::PositiveNumber);
  rep->add_option("--seed", common.seed, "base seed (falls back to PELOTON_SEED, then 42)");
  rep->add_option("--out", rep_out, "output directory")->required();
  rep->add_option("--scenario", rep_scenario,
                  "population profile: as-configured, strategy, ability or null");
  rep->add_option("--method", rep_method, "reml or ml")->check(CLI::IsMember({"reml", "ml"}));
  rep->add_option("--format", rep_format, "log format: csv or jsonl");
  rep->add_option("--jobs", common.jobs, "parallel races (0 = auto)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(common, sim_races, sim_out, sim_format, sim_scenario);
    if (analyze->parsed()) return cmd_analyze(an_logs, an_out, an_gap, an_breakaway);
    if (fit->parsed()) return cmd_fit(fit_metrics, fit_model, fit_tt, fit_method, fit_out);
    if (eq->parsed()) {
      return cmd_equilibrium(eq_t, eq_r, eq_s, eq_p, eq_dyn, eq_x0, eq_step, eq_iters, eq_traj);
    }
    if (rep->parsed()) {
      return cmd_report(common, rep_races, rep_out, rep_scenario, rep_method, rep_format);
    }
  } catch (const peloton::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const peloton::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 2;
  } catch (const peloton::ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
