#include "peloton/dilemma.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "peloton/errors.hpp"
#include "peloton/util.hpp"

namespace peloton::dilemma {

namespace {

// Self-contained generator so per-agent streams are fully specified and
// independent of library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  double uniform() { return static_cast<double>(splitmix64(state_) >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

constexpr double kDt = 0.1;
constexpr double kMass = 70.0;                  // kg, effective
constexpr double kAerobicFloorFraction = 0.55;  // power available without draining the budget
constexpr double kSprintReserveFraction = 1.0;  // of energy_budget; scales the final sprint
constexpr double kRefractorySeconds = 15.0;     // no front acceptance right after a pull
constexpr double kCommonPaceFactor = 0.95;      // peloton cruise relative to the solo speed
constexpr double kSpeedRelaxSeconds = 0.8;
constexpr double kMaxAccel = 2.0;
constexpr double kMaxBrake = -3.0;
constexpr double kDecisionInterval = 1.0;   // seconds between front-acceptance draws
constexpr double kStintMinSeconds = 15.0;
constexpr double kStintMaxSeconds = 25.0;
constexpr double kStallSpeedFactor = 0.85;  // of the config base cruise speed
constexpr double kReluctantDecayRate = 0.02;  // fractional speed decay per second
constexpr double kStallFloorFactor = 0.9;     // stalls bottom out at this share of the pace
constexpr double kPressureZoneSeconds = 1.2;  // gap to the front that invites coming through
constexpr double kDrawScale = 0.08;           // tempers per-second acceptance draws
constexpr double kFrontSlowFactor = 0.97;     // front below this share of pace counts as stalled
constexpr double kSurgeBoost = 2.0;         // m/s over the predecessor while taking the front
constexpr double kSurgeSeconds = 8.0;
constexpr double kIsolationGapSeconds = 3.0;
constexpr double kSpacingGain = 0.9;        // 1/s^2, spacing error feedback
constexpr double kClosingGain = 1.9;        // 1/s, relative speed feedback
constexpr double kStartSpeed = 3.0;
constexpr double kMinSpeed = 0.5;
constexpr double kStartSpacingMeters = 0.7;
constexpr double kMaxSimSeconds = 7200.0;
constexpr double kPaceJitter = 0.01;

double quantize_ms(double t) { return std::round(t * 1000.0) / 1000.0; }

struct Agent {
  std::string id;
  double power = 0.0;
  double propensity = 0.0;
  Rng rng;
  double pos = 0.0;
  double v = kStartSpeed;
  double energy = 0.0;
  bool exposed = true;
  bool finished = false;
  bool disqualified = false;
  double willing_until = -1.0;
  double surge_until = -1.0;
  double refractory_until = -1.0;
  double next_decision = 0.0;
  double pace_target = 0.0;
  double exposed_seconds = 0.0;
  double energy_spent = 0.0;
  std::optional<double> finish_time;

  explicit Agent(std::uint64_t seed) : rng(seed) {}
};

std::string skater_id_for(int index, int n) {
  const int width = n >= 100 ? 3 : 2;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "s%0*d", width, index + 1);
  return buf;
}

}  // namespace

void validate_chicken(const PayoffMatrix& m) {
  if (!(m.temptation > m.reward)) {
    throw ValidationError("not a chicken game: requires T > R, got T=" +
                          std::to_string(m.temptation) + " R=" + std::to_string(m.reward));
  }
  if (!(m.reward > m.sucker)) {
    throw ValidationError("not a chicken game: requires R > S, got R=" +
                          std::to_string(m.reward) + " S=" + std::to_string(m.sucker));
  }
  if (!(m.sucker > m.punishment)) {
    throw ValidationError("not a chicken game: requires S > P, got S=" +
                          std::to_string(m.sucker) + " P=" + std::to_string(m.punishment));
  }
}

double nash_cooperation_fraction(const PayoffMatrix& m) {
  validate_chicken(m);
  return (m.sucker - m.punishment) /
         (m.temptation - m.reward + m.sucker - m.punishment);
}

std::pair<double, double> expected_payoffs(const PayoffMatrix& m, double coop_fraction) {
  if (!(coop_fraction >= 0.0 && coop_fraction <= 1.0)) {
    throw ValidationError("cooperation fraction must lie in [0, 1]");
  }
  const double payoff_c = coop_fraction * m.reward + (1.0 - coop_fraction) * m.sucker;
  const double payoff_d = coop_fraction * m.temptation + (1.0 - coop_fraction) * m.punishment;
  return {payoff_c, payoff_d};
}

std::vector<double> best_response_dynamics(const PayoffMatrix& m, double x0, double step,
                                           int iterations) {
  if (!(x0 > 0.0 && x0 < 1.0)) throw ValidationError("x0 must lie in (0, 1)");
  if (!(step > 0.0)) throw ValidationError("step must be positive");
  if (iterations < 0) throw ValidationError("iterations must be non-negative");
  std::vector<double> trajectory;
  trajectory.reserve(static_cast<size_t>(iterations) + 1);
  trajectory.push_back(x0);
  double x = x0;
  for (int k = 0; k < iterations; ++k) {
    const auto [pc, pd] = expected_payoffs(m, x);
    const double sign = pc > pd ? 1.0 : (pc < pd ? -1.0 : 0.0);
    x = std::clamp(x + step * sign, 0.0, 1.0);
    trajectory.push_back(x);
  }
  return trajectory;
}

void validate(const SimConfig& c) {
  if (c.n_skaters < 1 || c.n_skaters > 24) {
    throw ValidationError("n_skaters must lie in [1, 24]");
  }
  if (c.n_laps < 1) throw ValidationError("n_laps must be >= 1");
  if (c.boundaries_per_lap < 1) throw ValidationError("boundaries_per_lap must be >= 1");
  if (!(c.track_length > 0)) throw ValidationError("track_length must be > 0");
  if (!(c.drafting_gap > 0)) throw ValidationError("drafting_gap must be > 0");
  if (!(c.drag_coefficient > 0)) throw ValidationError("drag_coefficient must be > 0");
  if (!(c.draft_drag_multiplier > 0 && c.draft_drag_multiplier < 1)) {
    throw ValidationError("draft_drag_multiplier must lie in (0, 1)");
  }
  if (!(c.energy_budget > 0)) throw ValidationError("energy_budget must be > 0");
  if (!(c.base_power > 0)) throw ValidationError("base_power must be > 0");
  if (!(c.sprint_power > 0)) throw ValidationError("sprint_power must be > 0");
  if (!(c.ability_spread >= 0)) throw ValidationError("ability_spread must be >= 0");
  if (!(c.lead_propensity >= 0 && c.lead_propensity <= 1)) {
    throw ValidationError("lead_propensity must lie in [0, 1]");
  }
}

SimConfig parse_sim_config(std::istream& in) {
  SimConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    auto as_double = [&]() {
      double v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size()) {
        throw ValidationError("config line " + std::to_string(line_no) + ": bad number '" +
                              value + "'");
      }
      return v;
    };
    auto as_u64 = [&]() {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc{} || p != value.data() + value.size()) {
        throw ValidationError("config line " + std::to_string(line_no) + ": bad integer '" +
                              value + "'");
      }
      return v;
    };
    if (key == "n_skaters") config.n_skaters = static_cast<int>(as_double());
    else if (key == "n_laps") config.n_laps = static_cast<int>(as_double());
    else if (key == "track_length") config.track_length = as_double();
    else if (key == "boundaries_per_lap") config.boundaries_per_lap = static_cast<int>(as_double());
    else if (key == "drafting_gap") config.drafting_gap = as_double();
    else if (key == "drag_coefficient") config.drag_coefficient = as_double();
    else if (key == "draft_drag_multiplier") config.draft_drag_multiplier = as_double();
    else if (key == "energy_budget") config.energy_budget = as_double();
    else if (key == "base_power") config.base_power = as_double();
    else if (key == "sprint_power") config.sprint_power = as_double();
    else if (key == "ability_spread") config.ability_spread = as_double();
    else if (key == "lead_propensity") config.lead_propensity = as_double();
    else if (key == "seed") config.seed = as_u64();
    else {
      throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                            "'");
    }
  }
  validate(config);
  return config;
}

std::string canonical_config_string(const SimConfig& c) {
  std::ostringstream out;
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "ability_spread=" << num(c.ability_spread) << '\n'
      << "base_power=" << num(c.base_power) << '\n'
      << "boundaries_per_lap=" << c.boundaries_per_lap << '\n'
      << "draft_drag_multiplier=" << num(c.draft_drag_multiplier) << '\n'
      << "drafting_gap=" << num(c.drafting_gap) << '\n'
      << "drag_coefficient=" << num(c.drag_coefficient) << '\n'
      << "energy_budget=" << num(c.energy_budget) << '\n'
      << "lead_propensity=" << num(c.lead_propensity) << '\n'
      << "n_laps=" << c.n_laps << '\n'
      << "n_skaters=" << c.n_skaters << '\n'
      << "seed=" << c.seed << '\n'
      << "sprint_power=" << num(c.sprint_power) << '\n'
      << "track_length=" << num(c.track_length) << '\n';
  return out.str();
}

SimResult simulate_race(const SimConfig& config, const std::string& race_id) {
  validate(config);
  std::vector<SkaterProfile> profiles(config.n_skaters);
  for (int i = 0; i < config.n_skaters; ++i) {
    Rng trait_rng(derive_seed(config.seed, 0x5150 + static_cast<std::uint64_t>(i)));
    const double z = trait_rng.normal();
    profiles[i].intrinsic_power =
        config.base_power * std::clamp(1.0 + config.ability_spread * z, 0.6, 1.4);
    profiles[i].lead_propensity = config.lead_propensity;
  }
  return simulate_race(config, profiles, race_id);
}

SimResult simulate_race(const SimConfig& config, const std::vector<SkaterProfile>& profiles,
                        const std::string& race_id) {
  validate(config);
  if (static_cast<int>(profiles.size()) != config.n_skaters) {
    throw ValidationError("profile count does not match n_skaters");
  }
  for (const SkaterProfile& p : profiles) {
    if (!(p.intrinsic_power > 0)) throw ValidationError("intrinsic_power must be > 0");
    if (!(p.lead_propensity >= 0 && p.lead_propensity <= 1)) {
      throw ValidationError("lead_propensity must lie in [0, 1]");
    }
  }

  const int n = config.n_skaters;
  const double seg = config.track_length / config.boundaries_per_lap;
  const int bpl = config.boundaries_per_lap;
  const int finish_k = config.n_laps * bpl;
  const double total_distance = config.n_laps * config.track_length;
  const double final_lap_pos = total_distance - config.track_length;
  const double cruise_speed_ref = std::cbrt(config.base_power / config.drag_coefficient);
  const double sprint_reserve = kSprintReserveFraction * config.energy_budget;

  std::vector<Agent> agents;
  agents.reserve(n);
  for (int i = 0; i < n; ++i) {
    Agent a(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(i)));
    a.id = skater_id_for(i, n);
    a.power = profiles[i].intrinsic_power;
    a.propensity = profiles[i].lead_propensity;
    a.energy = config.energy_budget;
    agents.push_back(std::move(a));
  }

  // Random start grid from the race-level stream.
  {
    Rng start_rng(derive_seed(config.seed, 0xA11CE));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(start_rng.uniform() * (i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    for (int i = 0; i < n; ++i) agents[order[i]].pos = -kStartSpacingMeters * i;
    // Desynchronized decision epochs avoid simultaneous front-acceptance draws.
    for (Agent& a : agents) a.next_decision = a.rng.uniform() * kDecisionInterval;
  }

  std::vector<racelog::PassageEvent> events;
  std::vector<racelog::Disqualification> dqs;
  double window_start = -1.0;
  double window_end = -1.0;

  std::vector<int> order_idx(n);
  std::vector<int> pred_of(n);
  std::vector<double> pos0(n);
  std::vector<double> v0(n);

  double t = 0.0;
  while (true) {
    bool any_active = false;
    for (const Agent& a : agents) any_active = any_active || (!a.finished && !a.disqualified);
    if (!any_active) break;
    if (t > kMaxSimSeconds) {
      throw ConvergenceError("simulation fault: race did not finish within the time cap");
    }

    // Order active skaters by position and find each one's nearest
    // predecessor; exposure follows the time-gap drafting rule.
    order_idx.clear();
    for (int i = 0; i < n; ++i) {
      pos0[i] = agents[i].pos;
      v0[i] = agents[i].v;
      if (!agents[i].finished && !agents[i].disqualified) order_idx.push_back(i);
    }
    std::sort(order_idx.begin(), order_idx.end(), [&](int a, int b) {
      if (pos0[a] != pos0[b]) return pos0[a] > pos0[b];
      return agents[a].id < agents[b].id;
    });
    pred_of.assign(n, -1);
    for (size_t r = 0; r < order_idx.size(); ++r) {
      const int i = order_idx[r];
      for (size_t q = r; q-- > 0;) {
        if (pos0[order_idx[q]] > pos0[i]) {
          pred_of[i] = order_idx[q];
          break;
        }
      }
      const int pred = pred_of[i];
      if (pred < 0) {
        agents[i].exposed = true;
      } else {
        const double gap_s = (pos0[pred] - pos0[i]) / std::max(v0[i], 0.1);
        agents[i].exposed = gap_s > config.drafting_gap;
      }
    }

    // Strategy and integration, in stable agent order so each agent's RNG
    // stream is consumed deterministically.
    for (int i = 0; i < n; ++i) {
      Agent& a = agents[i];
      if (a.finished || a.disqualified) continue;

      const double v_base = std::cbrt(a.power / config.drag_coefficient);
      const double floor_power = kAerobicFloorFraction * a.power;
      const double sprint_power = config.sprint_power * (a.power / config.base_power);
      const double k_drag =
          config.drag_coefficient * (a.exposed ? 1.0 : config.draft_drag_multiplier);

      const int pred = pred_of[i];
      bool isolated = true;
      if (pred >= 0) {
        isolated = (pos0[pred] - pos0[i]) / std::max(v0[i], 0.1) > kIsolationGapSeconds;
      }
      if (isolated) {
        // Anyone close behind still makes this a group situation.
        for (int j : order_idx) {
          if (j == i || pos0[j] > pos0[i]) continue;
          if ((pos0[i] - pos0[j]) / std::max(v0[j], 0.1) <= kIsolationGapSeconds) {
            isolated = false;
            break;
          }
        }
      }

      const double common_pace = kCommonPaceFactor * cruise_speed_ref;
      const bool opening_lap = a.pos < config.track_length;
      const bool at_front = pred < 0;

      // A willing leader who has been passed stops pulling.
      if (t < a.willing_until && !at_front) a.willing_until = -1.0;

      auto draws_allowed = [&](double now) {
        return now >= a.refractory_until && now >= a.next_decision;
      };
      auto grant_stint = [&](double now) {
        a.surge_until = -1.0;
        a.willing_until = now + a.rng.uniform(kStintMinSeconds, kStintMaxSeconds);
        a.pace_target = common_pace * (1.0 + kPaceJitter * (2.0 * a.rng.uniform() - 1.0));
      };

      bool following = false;
      double follow_accel = 0.0;
      double v_target;
      if (a.pos >= final_lap_pos) {
        // Final lap: sprint with power scaled by the remaining budget. The
        // target speed is referenced to full drag: passing means leaving the
        // slipstream, so the draft discount must not inflate the target.
        const double scale = std::clamp(a.energy / sprint_reserve, 0.0, 1.0);
        const double p_sprint = floor_power + (sprint_power - floor_power) * scale;
        v_target = std::cbrt(p_sprint / config.drag_coefficient);
      } else if (isolated) {
        // Chase when dropped, otherwise time-trial pace.
        v_target = pred >= 0 ? 1.02 * v_base : v_base;
      } else if (opening_lap) {
        // Neutral opening lap: the field rolls up to pace together.
        if (at_front) {
          v_target = common_pace;
        } else {
          following = true;
          const double dist = pos0[pred] - pos0[i];
          const double desired = 0.5 * config.drafting_gap * std::max(v0[i], kMinSpeed);
          follow_accel =
              kSpacingGain * (dist - desired) + kClosingGain * (v0[pred] - a.v);
          v_target = a.v;
        }
      } else if (at_front && t < a.surge_until) {
        grant_stint(t);  // surged through: accept the front
        v_target = a.pace_target;
      } else if (at_front && t < a.willing_until) {
        v_target = a.pace_target;
        // A leader pulls for the group: ease up when the line has detached.
        double follower_gap = 1e9;
        for (int j : order_idx) {
          if (j == i || pos0[j] > pos0[i]) continue;
          follower_gap = std::min(
              follower_gap, (pos0[i] - pos0[j]) / std::max(v0[j], 0.1));
        }
        if (follower_gap > 0.8) v_target = a.pace_target - 1.0;
      } else if (at_front) {
        if (a.willing_until > 0) {
          // Stint over: stop pulling and let the group decide who comes
          // through next.
          a.willing_until = -1.0;
          a.refractory_until = t + kRefractorySeconds;
          v_target = std::max(a.v * (1.0 - kReluctantDecayRate * kSpeedRelaxSeconds),
                              kStallFloorFactor * common_pace);
        } else {
          // Reluctant leader: the group decays until somebody accepts the
          // front; the stall bottoms out well above a crawl.
          if (draws_allowed(t)) {
            a.next_decision = t + kDecisionInterval;
            if (a.rng.uniform() < a.propensity) grant_stint(t);
          }
          if (t < a.willing_until) {
            v_target = a.pace_target;
          } else {
            v_target = std::max(a.v * (1.0 - kReluctantDecayRate * kSpeedRelaxSeconds),
                                kStallFloorFactor * common_pace);
          }
        }
      } else {
        // In the line (sheltered, or exposed with a catchable group ahead):
        // critically damped spacing control on the wheel ahead.
        following = true;
        const double ahead_v = v0[pred];
        const double dist = pos0[pred] - pos0[i];
        const double desired = 0.5 * config.drafting_gap * std::max(v0[i], kMinSpeed);
        follow_accel = kSpacingGain * (dist - desired) + kClosingGain * (ahead_v - a.v);
        v_target = a.v;  // overridden below when passing
        double v_override = -1.0;
        const int front = order_idx.front();
        if (pred != front) {
          // Come around a blown wheel: when the predecessor has detached from
          // the front of the group, pass instead of following them backwards.
          const double front_gap_s = (pos0[front] - pos0[i]) / std::max(v0[i], 0.1);
          if (front_gap_s <= kIsolationGapSeconds && v0[front] - ahead_v > 0.5) {
            v_override = std::max(v_override, ahead_v + kSurgeBoost);
          }
        }
        if (t < a.surge_until) {
          v_override = std::max(v_override, ahead_v + kSurgeBoost);
        } else {
          // Front-pressure draw: skaters near a stalled front decide whether
          // to come through; deep stalls open the draw to everybody.
          const double gap_to_front = (pos0[front] - pos0[i]) / std::max(v0[i], 0.1);
          const bool front_stalled = v0[front] < kFrontSlowFactor * common_pace;
          const bool pressured = front_stalled && gap_to_front <= kPressureZoneSeconds;
          const bool deep_stall = a.v < kStallSpeedFactor * cruise_speed_ref;
          if ((pressured || deep_stall) && draws_allowed(t)) {
            a.next_decision = t + kDecisionInterval;
            if (a.rng.uniform() < kDrawScale * a.propensity) {
              a.surge_until = t + kSurgeSeconds;
              v_override = std::max(v_override, ahead_v + kSurgeBoost);
            }
          }
        }
        if (v_override > 0) {
          following = false;
          v_target = v_override;
        }
      }
      v_target = std::max(v_target, kMinSpeed);

      const double a_des =
          following
              ? std::clamp(follow_accel, kMaxBrake, kMaxAccel)
              : std::clamp((v_target - a.v) / kSpeedRelaxSeconds, kMaxBrake, kMaxAccel);
      const double drag_power = k_drag * a.v * a.v * a.v;
      const double p_need = drag_power + kMass * a.v * a_des;
      const double p_avail =
          floor_power + std::min(a.energy / kDt, std::max(0.0, sprint_power - floor_power));
      const double p_ex = std::clamp(p_need, 0.0, p_avail);
      double accel = p_need <= 0.0 ? a_des : (p_ex - drag_power) / (kMass * a.v);
      accel = std::clamp(accel, kMaxBrake, kMaxAccel);

      const double v_new = std::max(kMinSpeed, a.v + accel * kDt);
      const double pos_new = a.pos + v_new * kDt;
      if (!std::isfinite(v_new) || !std::isfinite(pos_new)) {
        throw ConvergenceError("simulation fault: non-finite state for skater " + a.id);
      }
      a.energy = std::max(0.0, a.energy - std::max(0.0, p_ex - floor_power) * kDt);
      a.energy_spent += p_ex * kDt;

      // Boundary crossings, interpolated inside the step.
      const int k_lo = static_cast<int>(std::floor(a.pos / seg)) + 1;
      const int k_hi = static_cast<int>(std::floor(pos_new / seg));
      for (int k = k_lo; k <= k_hi; ++k) {
        const double frac = (k * seg - a.pos) / (pos_new - a.pos);
        const double t_cross = quantize_ms(t + kDt * frac);
        if (k >= bpl && k <= finish_k) {
          events.push_back({a.id, k / bpl, k % bpl, t_cross, true});
        }
        if (k == (config.n_laps - 3) * bpl && config.n_laps >= 4) {
          window_start = window_start < 0 ? t_cross : std::min(window_start, t_cross);
        }
        if (k == (config.n_laps - 1) * bpl && config.n_laps >= 2) {
          window_end = window_end < 0 ? t_cross : std::min(window_end, t_cross);
        }
        if (k == finish_k) {
          a.finished = true;
          a.finish_time = t_cross;
          break;
        }
      }
      a.v = v_new;
      a.pos = pos_new;
    }

    // Lapped skaters are disqualified the moment the gap to the front of the
    // race reaches a full lap.
    double lead_pos = -1e300;
    for (const Agent& a : agents) {
      if (!a.disqualified && !a.finished) lead_pos = std::max(lead_pos, a.pos);
    }
    for (Agent& a : agents) {
      if (a.finished || a.disqualified) continue;
      if (lead_pos - a.pos >= config.track_length) {
        a.disqualified = true;
        dqs.push_back({a.id, quantize_ms(t + kDt)});
      }
    }

    // Ground-truth exposure inside the tau window.
    if (window_start >= 0) {
      const double slice_end = window_end >= 0 ? std::min(t + kDt, window_end) : t + kDt;
      const double overlap = slice_end - std::max(t, window_start);
      if (overlap > 0) {
        for (Agent& a : agents) {
          if (!a.finished && !a.disqualified && a.exposed) a.exposed_seconds += overlap;
        }
      }
    }

    t += kDt;
  }

  SimResult result;
  result.log.meta.race_id =
      race_id.empty() ? "race-" + std::to_string(config.seed) : race_id;
  result.log.meta.sex = racelog::Sex::men;
  result.log.meta.n_laps = config.n_laps;
  result.log.meta.track_length = config.track_length;
  result.log.meta.boundaries_per_lap = bpl;
  result.log.meta.n_skaters = n;
  result.log.events = std::move(events);
  result.log.disqualifications = std::move(dqs);

  // A skater disqualified before the first logged crossing has no events and
  // cannot stay on the roster.
  {
    std::set<std::string> present;
    for (const racelog::PassageEvent& ev : result.log.events) present.insert(ev.skater_id);
    if (static_cast<int>(present.size()) != n) {
      std::erase_if(result.log.disqualifications,
                    [&](const racelog::Disqualification& d) { return !present.count(d.skater_id); });
      result.log.meta.n_skaters = static_cast<int>(present.size());
    }
  }

  for (const Agent& a : agents) {
    SkaterOutcome out;
    out.skater_id = a.id;
    out.intrinsic_power = a.power;
    out.lead_propensity = a.propensity;
    out.best_time = 3000.0 / std::cbrt(a.power / config.drag_coefficient);
    out.exposed_seconds = a.exposed_seconds;
    out.energy_spent = a.energy_spent;
    out.energy_drained = config.energy_budget - a.energy;
    out.finish_time = a.finish_time;
    result.skaters.push_back(std::move(out));
  }

  racelog::validate(result.log);
  return result;
}

}  // namespace peloton::dilemma
