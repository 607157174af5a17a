#include "peloton/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "peloton/errors.hpp"
#include "peloton/util.hpp"

namespace peloton::metrics {

namespace {

using racelog::Crossing;
using racelog::RaceLog;
using racelog::SkaterTrack;

// Crossing times per cumulative boundary index, each sorted by time.
struct CrossingSets {
  std::map<int, std::vector<std::pair<double, const std::string*>>> by_index;

  static CrossingSets build(const std::vector<SkaterTrack>& tracks) {
    CrossingSets sets;
    for (const SkaterTrack& t : tracks) {
      for (const Crossing& c : t.crossings) {
        sets.by_index[c.k].emplace_back(c.time, &t.skater_id);
      }
    }
    for (auto& [k, v] : sets.by_index) {
      std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        return std::tie(a.first, *a.second) < std::tie(b.first, *b.second);
      });
    }
    return sets;
  }
};

bool sheltered_at(const CrossingSets& sets, int k, const std::string& skater_id, double time,
                  double gap_threshold) {
  auto it = sets.by_index.find(k);
  if (it == sets.by_index.end()) return false;
  // The nearest earlier crosser carries the smallest gap, so checking it is
  // equivalent to checking every earlier crosser.
  bool sheltered = false;
  for (const auto& [t, id] : it->second) {
    if (*id == skater_id) continue;
    if (t < time && time - t <= gap_threshold) {
      sheltered = true;
      break;
    }
    if (t >= time) break;
  }
  return sheltered;
}

int rank_boundary_index(const RaceLog& log, int laps_to_finish) {
  const int lap = log.meta.n_laps - laps_to_finish;
  if (lap < 1) {
    throw ValidationError("race too short for a crossing " + std::to_string(laps_to_finish) +
                          " laps from the finish");
  }
  return racelog::cumulative_index(lap, 0, log.meta.boundaries_per_lap);
}

double min_time_at(const CrossingSets& sets, int k, const char* what) {
  auto it = sets.by_index.find(k);
  if (it == sets.by_index.end() || it->second.empty()) {
    throw ValidationError(std::string("required crossing absent from log: ") + what);
  }
  return it->second.front().first;
}

}  // namespace

AnalysisWindow analysis_window(const RaceLog& log) {
  const auto tracks = racelog::build_tracks(log);
  const CrossingSets sets = CrossingSets::build(tracks);
  AnalysisWindow w;
  w.start = min_time_at(sets, rank_boundary_index(log, 3), "boundary 0, three laps to go");
  w.end = min_time_at(sets, rank_boundary_index(log, 1), "boundary 0, one lap to go");
  if (!(w.end > w.start)) {
    throw ValidationError("analysis window is empty: end <= start");
  }
  return w;
}

bool is_sheltered(const RaceLog& log, const std::string& skater_id, int lap, int boundary,
                  const DraftingParams& params) {
  if (!(params.gap_threshold > 0)) throw ValidationError("gap_threshold must be > 0");
  const auto tracks = racelog::build_tracks(log);
  const CrossingSets sets = CrossingSets::build(tracks);
  const int k = racelog::cumulative_index(lap, boundary, log.meta.boundaries_per_lap);
  for (const SkaterTrack& t : tracks) {
    if (t.skater_id != skater_id) continue;
    if (std::optional<double> time = t.time_at(k)) {
      return sheltered_at(sets, k, skater_id, *time, params.gap_threshold);
    }
  }
  throw ValidationError("skater " + skater_id + " has no crossing at lap " +
                        std::to_string(lap) + " boundary " + std::to_string(boundary));
}

ExposureSummary exposed_time(const RaceLog& log, const std::string& skater_id,
                             const DraftingParams& params) {
  if (!(params.gap_threshold > 0)) throw ValidationError("gap_threshold must be > 0");
  const AnalysisWindow window = analysis_window(log);
  const auto tracks = racelog::build_tracks(log);
  const CrossingSets sets = CrossingSets::build(tracks);

  const SkaterTrack* track = nullptr;
  for (const SkaterTrack& t : tracks) {
    if (t.skater_id == skater_id) track = &t;
  }
  if (!track) throw ValidationError("unknown skater: " + skater_id);

  ExposureSummary summary;
  summary.skater_id = skater_id;
  summary.window = window;

  double imputed = 0.0;
  bool exposed = false;
  for (size_t i = 0; i < track->crossings.size(); ++i) {
    const Crossing& c = track->crossings[i];
    if (c.observed || i == 0) {
      exposed = !sheltered_at(sets, c.k, skater_id, c.time, params.gap_threshold);
    }
    // else: the skater keeps the preceding state.
    if (i + 1 == track->crossings.size()) break;
    const double seg_start = std::max(c.time, window.start);
    const double seg_end = std::min(track->crossings[i + 1].time, window.end);
    const double length = seg_end - seg_start;
    if (length <= 0 || !exposed) continue;
    summary.tau += length;
    if (!c.observed) imputed += length;
  }
  summary.imputed_fraction = summary.tau > 0 ? imputed / summary.tau : 0.0;
  return summary;
}

racelog::RaceLog impute_carry_forward(const RaceLog& log, const VisibilityMask& mask) {
  RaceLog out = log;
  if (mask.empty()) return out;

  const int bpl = log.meta.boundaries_per_lap;
  auto visible = [](const VisibilityIntervals& intervals, double t) {
    for (const auto& [lo, hi] : intervals) {
      if (t >= lo && t <= hi) return true;
    }
    return false;
  };

  // Collect per-skater event pointers sorted by crossing index.
  std::unordered_map<std::string, std::vector<racelog::PassageEvent*>> by_skater;
  for (racelog::PassageEvent& ev : out.events) by_skater[ev.skater_id].push_back(&ev);

  for (auto& [skater_id, events] : by_skater) {
    auto it = mask.find(skater_id);
    if (it == mask.end()) continue;
    std::sort(events.begin(), events.end(),
              [bpl](const racelog::PassageEvent* a, const racelog::PassageEvent* b) {
                return racelog::cumulative_index(a->lap, a->boundary, bpl) <
                       racelog::cumulative_index(b->lap, b->boundary, bpl);
              });
    std::vector<bool> seen(events.size());
    bool any_seen = false;
    for (size_t i = 0; i < events.size(); ++i) {
      seen[i] = visible(it->second, events[i]->time);
      any_seen = any_seen || seen[i];
    }
    if (!any_seen) {
      throw ValidationError("skater " + skater_id + " is never observed");
    }
    for (size_t i = 0; i < events.size(); ++i) {
      if (seen[i]) {
        events[i]->observed = true;
        continue;
      }
      events[i]->observed = false;
      // Synthesize the time from the bracketing observed crossings; at the
      // edges of the race the recorded time is kept (still flagged).
      size_t lo = i, hi = i;
      while (lo > 0 && !seen[lo]) --lo;
      while (hi + 1 < events.size() && !seen[hi]) ++hi;
      if (!seen[lo] || !seen[hi]) continue;
      const int k0 = racelog::cumulative_index(events[lo]->lap, events[lo]->boundary, bpl);
      const int k1 = racelog::cumulative_index(events[hi]->lap, events[hi]->boundary, bpl);
      const int k = racelog::cumulative_index(events[i]->lap, events[i]->boundary, bpl);
      events[i]->time = events[lo]->time + (events[hi]->time - events[lo]->time) *
                                               static_cast<double>(k - k0) /
                                               static_cast<double>(k1 - k0);
    }
  }
  return out;
}

std::map<std::string, int> intermediate_ranks(const RaceLog& log, int laps_to_finish) {
  if (laps_to_finish < 1 || laps_to_finish > 3) {
    throw ValidationError("laps_to_finish must be 1, 2 or 3");
  }
  const int k = rank_boundary_index(log, laps_to_finish);
  const auto tracks = racelog::build_tracks(log);

  std::vector<std::pair<double, const std::string*>> crossers;
  for (const SkaterTrack& t : tracks) {
    if (std::optional<double> time = t.time_at(k)) crossers.emplace_back(*time, &t.skater_id);
  }
  if (crossers.empty()) {
    throw ValidationError("no crossings at boundary 0 with " + std::to_string(laps_to_finish) +
                          " laps to go");
  }
  std::sort(crossers.begin(), crossers.end(),
            [](const auto& a, const auto& b) {
              return std::tie(a.first, *a.second) < std::tie(b.first, *b.second);
            });
  std::map<std::string, int> ranks;
  int rank = 1;
  for (const auto& [time, id] : crossers) ranks[*id] = rank++;
  return ranks;
}

double reconcile_rank(double rank_1, double rank_2) {
  return rank_1 == rank_2 ? rank_1 : 0.5 * (rank_1 + rank_2);
}

std::optional<double> reconcile_checkers(const CheckerPair& pair, double tolerance) {
  if (pair.tau_1 < 0 || pair.tau_2 < 0) {
    throw ValidationError("checker measurements must be non-negative");
  }
  const double sum = pair.tau_1 + pair.tau_2;
  if (sum == 0.0) return 0.0;  // D undefined; identical zero measurements agree
  const double d = std::abs(pair.tau_1 - pair.tau_2) / sum;
  if (d < tolerance) return 0.5 * sum;
  return std::nullopt;
}

RaceType classify_breakaway(const RaceLog& log, double breakaway_gap) {
  const int k_first = rank_boundary_index(log, 2);
  const int k_last = rank_boundary_index(log, 1);
  const auto tracks = racelog::build_tracks(log);
  const CrossingSets sets = CrossingSets::build(tracks);

  constexpr double kInf = std::numeric_limits<double>::infinity();
  double min_gap[3] = {kInf, kInf, kInf};
  bool any_crosser = false;
  bool any_pair = false;
  for (int k = k_first; k <= k_last; ++k) {
    auto it = sets.by_index.find(k);
    if (it == sets.by_index.end() || it->second.empty()) continue;
    any_crosser = true;
    const auto& crossers = it->second;
    if (crossers.size() < 2) continue;
    any_pair = true;
    for (int n = 1; n <= 3 && n < static_cast<int>(crossers.size()); ++n) {
      const double gap = crossers[n].first - crossers[n - 1].first;
      min_gap[n - 1] = std::min(min_gap[n - 1], gap);
    }
  }
  if (!any_crosser) {
    throw ValidationError("no crossing sets in the last-2-to-last-1-lap window");
  }
  // A lone survivor in the window means the rest of the field was lapped out:
  // the gap behind the leader is unbounded.
  if (!any_pair) return RaceType::breakaway;
  for (double g : min_gap) {
    if (std::isfinite(g) && g > breakaway_gap) return RaceType::breakaway;
  }
  return RaceType::bunch;
}

std::vector<MetricsRow> compute_race_metrics(const RaceLog& log, const DraftingParams& params,
                                             double breakaway_gap) {
  const bool breakaway = classify_breakaway(log, breakaway_gap) == RaceType::breakaway;
  const auto ranks_l3 = intermediate_ranks(log, 3);
  const auto ranks_l2 = intermediate_ranks(log, 2);
  const auto ranks_l1 = intermediate_ranks(log, 1);
  const racelog::RankTable finish = racelog::assign_finish_ranks(log);

  std::vector<MetricsRow> rows;
  for (const racelog::RankEntry& entry : finish.entries) {
    auto l3 = ranks_l3.find(entry.skater_id);
    auto l2 = ranks_l2.find(entry.skater_id);
    auto l1 = ranks_l1.find(entry.skater_id);
    if (l3 == ranks_l3.end() || l2 == ranks_l2.end() || l1 == ranks_l1.end()) continue;
    MetricsRow row;
    row.race_id = log.meta.race_id;
    row.skater_id = entry.skater_id;
    const ExposureSummary exposure = exposed_time(log, entry.skater_id, params);
    row.tau = exposure.tau;
    row.imputed_fraction = exposure.imputed_fraction;
    row.rank_l3 = l3->second;
    row.rank_l2 = l2->second;
    row.rank_l1 = l1->second;
    row.finish_rank = entry.finish_rank;
    row.norm_finish_rank = racelog::normalize_rank(entry.finish_rank, log.meta.n_skaters);
    row.breakaway = breakaway;
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {
constexpr const char* kMetricsHeader =
    "race_id,skater_id,tau,imputed_fraction,rank_L3,rank_L2,rank_L1,finish_rank,"
    "norm_finish_rank,breakaway";
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out,
                       const std::string& provenance_comment) {
  if (!provenance_comment.empty()) out << "# " << provenance_comment << "\n";
  out << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) {
    out << r.race_id << ',' << r.skater_id << ',' << format_fixed(r.tau, 6) << ','
        << format_fixed(r.imputed_fraction, 6) << ',' << r.rank_l3 << ',' << r.rank_l2 << ','
        << r.rank_l1 << ',' << r.finish_rank << ',' << format_fixed(r.norm_finish_rank, 6)
        << ',' << (r.breakaway ? 1 : 0) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    if (!header_seen) {
      if (trimmed != kMetricsHeader) {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": unexpected metrics CSV header");
      }
      header_seen = true;
      continue;
    }
    const std::vector<std::string> f = split(trimmed, ',');
    if (f.size() != 10) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 10 fields");
    }
    auto to_double = [&](const std::string& s, const char* name) {
      double v = 0;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || p != s.data() + s.size()) {
        throw ValidationError("line " + std::to_string(line_no) + ": malformed " + name);
      }
      return v;
    };
    MetricsRow r;
    r.race_id = f[0];
    r.skater_id = f[1];
    r.tau = to_double(f[2], "tau");
    r.imputed_fraction = to_double(f[3], "imputed_fraction");
    r.rank_l3 = static_cast<int>(to_double(f[4], "rank_L3"));
    r.rank_l2 = static_cast<int>(to_double(f[5], "rank_L2"));
    r.rank_l1 = static_cast<int>(to_double(f[6], "rank_L1"));
    r.finish_rank = static_cast<int>(to_double(f[7], "finish_rank"));
    r.norm_finish_rank = to_double(f[8], "norm_finish_rank");
    r.breakaway = f[9] == "1";
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw ValidationError("metrics CSV missing header");
  return rows;
}

}  // namespace peloton::metrics
