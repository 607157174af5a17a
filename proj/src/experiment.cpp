#include "peloton/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <future>
#include <istream>
#include <ostream>
#include <set>

#include "peloton/errors.hpp"
#include "peloton/util.hpp"

namespace peloton::experiment {

namespace {

// Same generator discipline as the simulator.
struct Rng {
  std::uint64_t state;
  double uniform() { return static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53; }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

std::string race_id_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "race_%03d", index + 1);
  return buf;
}

}  // namespace

Scenario scenario_from_string(const std::string& name) {
  if (name == "as-configured") return Scenario::as_configured;
  if (name == "strategy") return Scenario::strategy_dominant;
  if (name == "ability") return Scenario::ability_dominant;
  if (name == "null") return Scenario::null_identical;
  throw ValidationError("unknown scenario '" + name +
                        "' (expected as-configured, strategy, ability or null)");
}

std::string scenario_to_string(Scenario s) {
  switch (s) {
    case Scenario::as_configured: return "as-configured";
    case Scenario::strategy_dominant: return "strategy";
    case Scenario::ability_dominant: return "ability";
    case Scenario::null_identical: return "null";
  }
  return "unknown";
}

std::vector<dilemma::SkaterProfile> make_population(const dilemma::SimConfig& config,
                                                    Scenario scenario) {
  const int n = config.n_skaters;
  std::vector<dilemma::SkaterProfile> profiles(n);

  Rng rng{derive_seed(config.seed, 0x90957)};
  for (int i = 0; i < n; ++i) {
    double ability = 1.0;
    if (scenario != Scenario::null_identical && config.ability_spread > 0) {
      ability = std::clamp(1.0 + config.ability_spread * rng.normal(), 0.6, 1.4);
    }
    profiles[i].intrinsic_power = config.base_power * ability;
    profiles[i].lead_propensity = config.lead_propensity;
  }

  if (scenario == Scenario::strategy_dominant) {
    // Evenly spread propensities assigned in a seeded random order.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = std::min(static_cast<int>(rng.uniform() * (i + 1)), i);
      std::swap(order[i], order[j]);
    }
    for (int i = 0; i < n; ++i) {
      profiles[order[i]].lead_propensity =
          n == 1 ? 0.5 : 0.05 + 0.9 * static_cast<double>(i) / (n - 1);
    }
  }
  return profiles;
}

stats::LmmDataset build_eq1_dataset(const std::vector<metrics::MetricsRow>& rows) {
  stats::LmmDataset data;
  data.covariate_names = {"lap_to_finish", "finish_rank"};
  for (const metrics::MetricsRow& row : rows) {
    if (row.finish_rank > 3) continue;
    const int n_skaters =
        static_cast<int>(std::lround(row.finish_rank / row.norm_finish_rank));
    const int lap_rank[3] = {row.rank_l1, row.rank_l2, row.rank_l3};
    for (int lap_to_finish = 1; lap_to_finish <= 3; ++lap_to_finish) {
      data.subject_ids.push_back(row.skater_id);
      data.response.push_back(racelog::normalize_rank(lap_rank[lap_to_finish - 1], n_skaters));
      data.covariates.push_back(
          {static_cast<double>(lap_to_finish), static_cast<double>(row.finish_rank)});
    }
  }
  return data;
}

stats::LmmDataset build_eq2_dataset(const std::vector<metrics::MetricsRow>& rows) {
  stats::LmmDataset data;
  data.covariate_names = {"tau"};
  for (const metrics::MetricsRow& row : rows) {
    data.subject_ids.push_back(row.skater_id);
    data.response.push_back(row.norm_finish_rank);
    data.covariates.push_back({row.tau});
  }
  return data;
}

stats::LmmDataset build_eq3_dataset(const std::vector<metrics::MetricsRow>& rows,
                                    const std::map<std::string, double>& time_trial,
                                    const std::string& covariate_name) {
  stats::LmmDataset data;
  data.covariate_names = {covariate_name};
  for (const metrics::MetricsRow& row : rows) {
    auto it = time_trial.find(row.skater_id);
    if (it == time_trial.end()) continue;  // skaters without time-trial records are dropped
    data.subject_ids.push_back(row.skater_id);
    data.response.push_back(row.norm_finish_rank);
    data.covariates.push_back({it->second});
  }
  if (data.response.empty()) {
    throw ValidationError("empty join: no metrics rows matched a time-trial record");
  }
  return data;
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs) {
  dilemma::validate(config.sim);
  if (config.n_races < 1) throw ValidationError("n_races must be >= 1");
  if (jobs < 1) jobs = 1;

  const std::vector<dilemma::SkaterProfile> population =
      make_population(config.sim, config.scenario);

  ExperimentResult result;
  result.races.resize(config.n_races);

  auto simulate_one = [&](int index) {
    dilemma::SimConfig race_config = config.sim;
    race_config.seed = derive_seed(config.sim.seed, 100 + static_cast<std::uint64_t>(index));
    RaceArtifact artifact;
    artifact.race_id = race_id_for(index);
    artifact.seed = race_config.seed;
    artifact.sim = dilemma::simulate_race(race_config, population, artifact.race_id);
    artifact.breakaway = metrics::classify_breakaway(artifact.sim.log, config.breakaway_gap) ==
                         metrics::RaceType::breakaway;
    return artifact;
  };

  if (jobs == 1) {
    for (int i = 0; i < config.n_races; ++i) result.races[i] = simulate_one(i);
  } else {
    // Fan races out, merge in seed order for reproducible reports.
    std::vector<std::future<RaceArtifact>> futures;
    futures.reserve(config.n_races);
    for (int i = 0; i < config.n_races; ++i) {
      futures.push_back(std::async(std::launch::async, simulate_one, i));
    }
    for (int i = 0; i < config.n_races; ++i) result.races[i] = futures[i].get();
  }

  for (const RaceArtifact& race : result.races) {
    for (const dilemma::SkaterOutcome& skater : race.sim.skaters) {
      auto it = result.time_trial_best.find(skater.skater_id);
      if (it == result.time_trial_best.end() || skater.best_time < it->second) {
        result.time_trial_best[skater.skater_id] = skater.best_time;
      }
    }
    if (race.breakaway) {
      result.excluded_race_ids.push_back(race.race_id);
      continue;
    }
    std::vector<metrics::MetricsRow> rows =
        metrics::compute_race_metrics(race.sim.log, config.drafting, config.breakaway_gap);
    result.metrics_rows.insert(result.metrics_rows.end(), rows.begin(), rows.end());

    std::vector<double> finish_ranks;
    std::vector<double> taus;
    for (const metrics::MetricsRow& row : rows) {
      finish_ranks.push_back(static_cast<double>(row.finish_rank));
      taus.push_back(row.tau);
    }
    try {
      const stats::PearsonResult pr = stats::pearson(finish_ranks, taus);
      result.per_race_pearson.push_back({race.race_id, pr.r, pr.p, pr.n});
    } catch (const ValidationError&) {
      // constant tau or too few rows; no per-race correlation
    }
  }

  auto fit_model = [&](ModelOutcome& outcome, const std::function<stats::LmmDataset()>& build) {
    try {
      outcome.fit = stats::fit_lmm(build(), config.method);
    } catch (const std::exception& e) {
      outcome.fit.reset();
      outcome.skip_reason = e.what();
    }
  };
  fit_model(result.eq1, [&] { return build_eq1_dataset(result.metrics_rows); });
  fit_model(result.eq2, [&] { return build_eq2_dataset(result.metrics_rows); });
  fit_model(result.eq3,
            [&] { return build_eq3_dataset(result.metrics_rows, result.time_trial_best); });
  return result;
}

void write_time_trial_csv(const std::map<std::string, double>& best, std::ostream& out,
                          const std::string& column) {
  out << "skater_id," << column << "\n";
  for (const auto& [id, value] : best) {
    out << id << ',' << format_fixed(value, 6) << '\n';
  }
}

std::pair<std::string, std::map<std::string, double>> read_time_trial_csv(std::istream& in) {
  std::map<std::string, double> values;
  std::string column;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    if (column.empty()) {
      if (trimmed == "skater_id,best_time") {
        column = "best_time";
      } else if (trimmed == "skater_id,standardized_best") {
        column = "standardized_best";
      } else {
        throw ValidationError(
            "time-trial CSV header must be skater_id,best_time or skater_id,standardized_best");
      }
      continue;
    }
    const std::vector<std::string> f = split(trimmed, ',');
    if (f.size() != 2) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 2 fields");
    }
    double v = 0;
    auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), v);
    if (ec != std::errc{} || p != f[1].data() + f[1].size()) {
      throw ValidationError("line " + std::to_string(line_no) + ": bad number '" + f[1] + "'");
    }
    values[f[0]] = v;
  }
  if (column.empty()) throw ValidationError("time-trial CSV missing header");
  return {column, values};
}

}  // namespace peloton::experiment
