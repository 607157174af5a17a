#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "peloton/dilemma.hpp"
#include "peloton/metrics.hpp"
#include "peloton/stats.hpp"

namespace peloton::experiment {

// Population profiles for a batch of races. The config supplies the
// magnitudes (ability_spread, lead_propensity); the scenario decides how
// traits vary across the roster.
enum class Scenario {
  as_configured,      // every skater uses the config values
  strategy_dominant,  // lead propensities spread over [0.05, 0.95]
  ability_dominant,   // abilities spread per config, identical strategies
  null_identical,     // identical agents; ties broken by seeded randomness
};

Scenario scenario_from_string(const std::string& name);
std::string scenario_to_string(Scenario s);

struct ExperimentConfig {
  dilemma::SimConfig sim;
  int n_races = 9;
  Scenario scenario = Scenario::strategy_dominant;
  stats::FitMethod method = stats::FitMethod::reml;
  metrics::DraftingParams drafting;
  double breakaway_gap = 2.0;
};

struct RaceArtifact {
  std::string race_id;
  std::uint64_t seed = 0;
  dilemma::SimResult sim;
  bool breakaway = false;
};

struct PearsonRow {
  std::string race_id;
  double r = 0.0;
  double p = 1.0;
  int n = 0;
};

struct ModelOutcome {
  std::optional<stats::LmmFit> fit;
  std::string skip_reason;
};

struct ExperimentResult {
  std::vector<RaceArtifact> races;
  std::vector<metrics::MetricsRow> metrics_rows;  // bunch races only
  std::vector<std::string> excluded_race_ids;
  std::map<std::string, double> time_trial_best;  // skater_id -> best_time
  ModelOutcome eq1;  // normalized intermediate rank ~ lap-to-finish + finish rank
  ModelOutcome eq2;  // normalized finish rank ~ exposed time
  ModelOutcome eq3;  // normalized finish rank ~ time-trial best
  std::vector<PearsonRow> per_race_pearson;  // finish rank vs tau, per kept race
};

// Per-skater profiles for the roster under a scenario; deterministic for a
// given config.
std::vector<dilemma::SkaterProfile> make_population(const dilemma::SimConfig& config,
                                                    Scenario scenario);

// Simulates n_races with a shared roster, drops breakaway races, computes
// metrics rows and fits the three models. Races run concurrently when
// jobs > 1 and are merged in seed order.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1);

// Dataset builders shared by the harness and the CLI fit command.
stats::LmmDataset build_eq1_dataset(const std::vector<metrics::MetricsRow>& rows);
stats::LmmDataset build_eq2_dataset(const std::vector<metrics::MetricsRow>& rows);
stats::LmmDataset build_eq3_dataset(const std::vector<metrics::MetricsRow>& rows,
                                    const std::map<std::string, double>& time_trial,
                                    const std::string& covariate_name = "best_time");

void write_time_trial_csv(const std::map<std::string, double>& best, std::ostream& out,
                          const std::string& column = "best_time");
// Returns (column name found, skater -> value); accepts best_time or
// standardized_best.
std::pair<std::string, std::map<std::string, double>> read_time_trial_csv(std::istream& in);

}  // namespace peloton::experiment
