#include "peloton/dilemma.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

#include "peloton/errors.hpp"
#include "peloton/metrics.hpp"
#include "peloton/racelog.hpp"
#include "oracles.hpp"

using namespace peloton;
using dilemma::PayoffMatrix;
using dilemma::SimConfig;

TEST_CASE("nash cooperation fraction: direct substitutions") {
  CHECK(dilemma::nash_cooperation_fraction({3, 2, 1, 0}) == doctest::Approx(0.5));
  CHECK(dilemma::nash_cooperation_fraction({2, 1.5, 1, 0}) ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("nash cooperation fraction rejects non-chicken orderings") {
  CHECK_THROWS_WITH_AS(dilemma::nash_cooperation_fraction({5, 3, 0, 1}),
                       doctest::Contains("S > P"), ValidationError);
  CHECK_THROWS_WITH_AS(dilemma::nash_cooperation_fraction({3, 5, 1, 0}),
                       doctest::Contains("T > R"), ValidationError);
  CHECK_THROWS_WITH_AS(dilemma::nash_cooperation_fraction({5, 1, 1, 0}),
                       doctest::Contains("R > S"), ValidationError);
}

TEST_CASE("equilibrium satisfies the indifference condition on random games") {
  oracles::ChickenSampler sampler{12345};
  for (int i = 0; i < 1000; ++i) {
    const auto [t, r, s, p] = sampler.next_chicken();
    const PayoffMatrix m{t, r, s, p};
    const double x = dilemma::nash_cooperation_fraction(m);
    CHECK(x > 0.0);
    CHECK(x < 1.0);
    const auto [pc, pd] = dilemma::expected_payoffs(m, x);
    CHECK(std::abs(pc - pd) <= 1e-12);
  }
}

TEST_CASE("equilibrium is invariant under common positive affine transforms") {
  oracles::ChickenSampler sampler{777};
  for (int i = 0; i < 50; ++i) {
    const auto [t, r, s, p] = sampler.next_chicken();
    const double x = dilemma::nash_cooperation_fraction({t, r, s, p});
    const double a = 2.5, b = -4.0;
    const double x2 = dilemma::nash_cooperation_fraction({a * t + b, a * r + b, a * s + b, a * p + b});
    CHECK(x2 == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("expected payoffs at the population extremes") {
  const PayoffMatrix m{3, 2, 1, 0};
  CHECK(dilemma::expected_payoffs(m, 1.0) == std::pair{2.0, 3.0});
  CHECK(dilemma::expected_payoffs(m, 0.0) == std::pair{1.0, 0.0});
  CHECK_THROWS_AS(dilemma::expected_payoffs(m, 1.5), ValidationError);
}

TEST_CASE("payoff components cross exactly once on chicken games") {
  oracles::ChickenSampler sampler{31337};
  for (int i = 0; i < 50; ++i) {
    const auto [t, r, s, p] = sampler.next_chicken();
    const PayoffMatrix m{t, r, s, p};
    int sign_changes = 0;
    double prev = dilemma::expected_payoffs(m, 0.0).first - dilemma::expected_payoffs(m, 0.0).second;
    for (int j = 1; j <= 100; ++j) {
      const auto [pc, pd] = dilemma::expected_payoffs(m, j / 100.0);
      const double diff = pc - pd;
      if ((diff > 0) != (prev > 0)) ++sign_changes;
      prev = diff;
    }
    CHECK(sign_changes == 1);
  }
}

TEST_CASE("best-response dynamics enter and stay near the equilibrium") {
  oracles::ChickenSampler sampler{2468};
  for (int i = 0; i < 20; ++i) {
    const auto [t, r, s, p] = sampler.next_chicken();
    const PayoffMatrix m{t, r, s, p};
    const double x_star = dilemma::nash_cooperation_fraction(m);
    const double step = 1e-3;
    for (double x0 : {0.05, 0.5, 0.95}) {
      const auto trajectory = dilemma::best_response_dynamics(m, x0, step, 2000);
      bool entered = false;
      for (size_t k = 0; k < trajectory.size(); ++k) {
        if (!entered && std::abs(trajectory[k] - x_star) <= step) entered = true;
        else if (entered) CHECK(std::abs(trajectory[k] - x_star) <= step * (1 + 1e-9));
      }
      CHECK(entered);
    }
  }
}

TEST_CASE("dynamics started at the equilibrium oscillate within one step") {
  const PayoffMatrix m{3, 2, 1, 0};
  const double x_star = dilemma::nash_cooperation_fraction(m);
  const auto trajectory = dilemma::best_response_dynamics(m, x_star, 1e-3, 500);
  for (double x : trajectory) CHECK(std::abs(x - x_star) <= 1e-3 * (1 + 1e-9));
}

TEST_CASE("prisoner's-dilemma ordering drives cooperation to zero") {
  // T > R > P > S: defection dominates, so the sign dynamics sink to 0.
  const PayoffMatrix pd{5, 3, 0, 1};
  const auto trajectory = dilemma::best_response_dynamics(pd, 0.9, 1e-3, 2000);
  CHECK(trajectory.back() == 0.0);
}

TEST_CASE("solo skater finishes at the drag steady state") {
  // The criterion isolates cruise physics: sprint power equal to base power
  // and a non-binding budget leave only the start-up transient.
  SimConfig config;
  config.n_skaters = 1;
  config.ability_spread = 0.0;
  config.sprint_power = config.base_power;
  config.energy_budget = 1e6;  // non-binding: only the start-up transient remains
  const double v_eq = std::cbrt(config.base_power / config.drag_coefficient);
  const double predicted = config.n_laps * config.track_length / v_eq;
  for (std::uint64_t seed : {1ull, 42ull, 999ull}) {
    config.seed = seed;
    const auto result = dilemma::simulate_race(config);
    REQUIRE(result.skaters[0].finish_time.has_value());
    CHECK(std::abs(*result.skaters[0].finish_time - predicted) / predicted < 0.02);
  }
}

TEST_CASE("same seed and config give byte-identical race logs") {
  SimConfig config;
  config.seed = 20240207;
  const auto a = dilemma::simulate_race(config);
  const auto b = dilemma::simulate_race(config);
  for (auto format : {racelog::LogFormat::csv, racelog::LogFormat::jsonl}) {
    std::ostringstream sa, sb;
    racelog::serialize_race_log(a.log, sa, format);
    racelog::serialize_race_log(b.log, sb, format);
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("simulated logs conform to the race log schema") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    SimConfig config;
    config.n_skaters = 4 + static_cast<int>(seed * 4);
    config.seed = 100 + seed;
    const auto result = dilemma::simulate_race(config);
    std::ostringstream out;
    racelog::serialize_race_log(result.log, out, racelog::LogFormat::jsonl);
    std::istringstream in(out.str());
    const auto parsed = racelog::parse_race_log(in, racelog::LogFormat::jsonl);
    CHECK(racelog::structurally_equal(result.log, parsed));
    CHECK_NOTHROW(racelog::assign_finish_ranks(result.log));
  }
}

TEST_CASE("speeds stay below the sprint drag steady state and energy within budget") {
  SimConfig config;
  config.n_skaters = 12;
  config.seed = 31415;
  const auto result = dilemma::simulate_race(config);
  const double v_cap =
      std::cbrt(1.1 * config.sprint_power /
                (config.drag_coefficient * config.draft_drag_multiplier));
  // Fastest observed speed bounds via consecutive crossing times.
  const double segment = config.track_length / config.boundaries_per_lap;
  for (const auto& track : racelog::build_tracks(result.log)) {
    for (size_t i = 1; i < track.crossings.size(); ++i) {
      const double dt = track.crossings[i].time - track.crossings[i - 1].time;
      const int segments = track.crossings[i].k - track.crossings[i - 1].k;
      CHECK(segment * segments / dt <= v_cap);
    }
  }
  for (const auto& skater : result.skaters) {
    CHECK(skater.energy_drained >= 0.0);
    CHECK(skater.energy_drained <= config.energy_budget + 1e-9);
    CHECK(skater.energy_spent >= 0.0);
  }
}

TEST_CASE("a pure drafter beats a dedicated leader") {
  // Two identical skaters, lead propensities 1 and 0: the drafter is exposed
  // strictly less and finishes at least as well in at least 90% of seeds.
  int fewer_exposed = 0;
  int rank_at_least_equal = 0;
  const int seeds = 200;
  for (int s = 0; s < seeds; ++s) {
    SimConfig config;
    config.n_skaters = 2;
    config.ability_spread = 0.0;
    config.seed = 5000 + s;
    const std::vector<dilemma::SkaterProfile> profiles{{config.base_power, 1.0},
                                                       {config.base_power, 0.0}};
    const auto result = dilemma::simulate_race(config, profiles, "duel");
    if (result.skaters[1].exposed_seconds < result.skaters[0].exposed_seconds) ++fewer_exposed;
    const auto ranks = racelog::assign_finish_ranks(result.log);
    if (ranks.by_skater("s02").finish_rank <= ranks.by_skater("s01").finish_rank) {
      ++rank_at_least_equal;
    }
  }
  CHECK(fewer_exposed >= static_cast<int>(0.9 * seeds));
  CHECK(rank_at_least_equal >= static_cast<int>(0.9 * seeds));
}

TEST_CASE("sim config file: defaults, overrides and unknown keys") {
  std::istringstream good(
      "# comment\n"
      "n_skaters = 12\n"
      "drafting_gap = 0.3\n"
      "seed = 7\n");
  const SimConfig config = dilemma::parse_sim_config(good);
  CHECK(config.n_skaters == 12);
  CHECK(config.drafting_gap == 0.3);
  CHECK(config.seed == 7);
  CHECK(config.n_laps == 16);
  CHECK(config.track_length == 400.0);

  std::istringstream bad("n_skaters = 12\nwheel_size = 4\n");
  CHECK_THROWS_WITH_AS(dilemma::parse_sim_config(bad), doctest::Contains("unknown key"),
                       ValidationError);

  std::istringstream invalid("n_skaters = 40\n");
  CHECK_THROWS_AS(dilemma::parse_sim_config(invalid), ValidationError);
}

TEST_CASE("canonical config string is stable and hash-ready") {
  SimConfig a, b;
  a.seed = 5;
  b.seed = 5;
  CHECK(dilemma::canonical_config_string(a) == dilemma::canonical_config_string(b));
  b.drag_coefficient += 1e-9;
  CHECK(dilemma::canonical_config_string(a) != dilemma::canonical_config_string(b));
}

TEST_CASE("invalid sim configs are rejected") {
  SimConfig config;
  config.n_skaters = 0;
  CHECK_THROWS_AS(dilemma::validate(config), ValidationError);
  config = SimConfig{};
  config.draft_drag_multiplier = 1.0;
  CHECK_THROWS_AS(dilemma::validate(config), ValidationError);
  config = SimConfig{};
  config.lead_propensity = 1.5;
  CHECK_THROWS_AS(dilemma::validate(config), ValidationError);
}
