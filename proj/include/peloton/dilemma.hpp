#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "peloton/racelog.hpp"

namespace peloton::dilemma {

// Row-player payoffs of the skater's dilemma: cooperation = leading the
// group, defection = hiding behind others. Chicken ordering T > R > S > P.
struct PayoffMatrix {
  double temptation = 0.0;  // T: defect against a cooperator
  double reward = 0.0;      // R: mutual cooperation
  double sucker = 0.0;      // S: cooperate against a defector
  double punishment = 0.0;  // P: mutual defection
};

// Throws ValidationError naming the violated inequality.
void validate_chicken(const PayoffMatrix& m);

// Mixed-equilibrium cooperation fraction (S - P) / (T - R + S - P).
double nash_cooperation_fraction(const PayoffMatrix& m);

// Per-opponent expected payoffs of a cooperator and a defector against a
// population cooperating with probability coop_fraction.
std::pair<double, double> expected_payoffs(const PayoffMatrix& m, double coop_fraction);

// Sign-following adjustment x_{k+1} = clip(x_k + step * sign(pi_C - pi_D)).
// Returns the trajectory including x0 (iterations + 1 values).
std::vector<double> best_response_dynamics(const PayoffMatrix& m, double x0, double step,
                                           int iterations);

struct SimConfig {
  int n_skaters = 20;
  int n_laps = 16;
  double track_length = 400.0;
  int boundaries_per_lap = 4;
  double drafting_gap = 0.2;           // seconds
  double drag_coefficient = 0.183;     // watts per (m/s)^3
  double draft_drag_multiplier = 0.7;  // drag factor while sheltered
  double energy_budget = 100000.0;     // work units above the aerobic floor
  double base_power = 450.0;           // sustainable cruise power, watts
  double sprint_power = 650.0;         // final-lap peak power, watts
  double ability_spread = 0.04;        // relative sigma of intrinsic power
  double lead_propensity = 0.5;        // probability of accepting the front
  std::uint64_t seed = 42;
};

void validate(const SimConfig& config);

// key = value file, one entry per line, '#' comments. Keys are exactly the
// SimConfig field names; unknown keys are an error.
SimConfig parse_sim_config(std::istream& in);
std::string canonical_config_string(const SimConfig& config);

// Per-skater traits; used when the population is heterogeneous.
struct SkaterProfile {
  double intrinsic_power = 0.0;
  double lead_propensity = 0.5;
};

struct SkaterOutcome {
  std::string skater_id;
  double intrinsic_power = 0.0;
  double lead_propensity = 0.0;
  double best_time = 0.0;        // synthetic time-trial best, seconds over 3000 m
  double exposed_seconds = 0.0;  // continuous exposure inside the tau window
  double energy_spent = 0.0;     // total mechanical work above zero
  double energy_drained = 0.0;   // budget consumed above the aerobic floor
  std::optional<double> finish_time;
};

struct SimResult {
  racelog::RaceLog log;
  std::vector<SkaterOutcome> skaters;
};

// Fixed-timestep (0.1 s) simulation on a track_length ring with cubic drag,
// a draft discount within drafting_gap, an energy budget spent above an
// aerobic floor, stall-and-accept front rotation governed by lead
// propensities, and a final-lap sprint scaled by remaining energy.
// Deterministic for a fixed config: one generator per race, split per agent
// by stable index. Boundary crossings are interpolated within the step and
// logged at millisecond precision.
SimResult simulate_race(const SimConfig& config, const std::string& race_id = "");
SimResult simulate_race(const SimConfig& config, const std::vector<SkaterProfile>& profiles,
                        const std::string& race_id = "");

}  // namespace peloton::dilemma
