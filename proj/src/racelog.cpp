#include "peloton/racelog.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "peloton/errors.hpp"
#include "peloton/util.hpp"

namespace peloton::racelog {

namespace {

using nlohmann::json;

std::string sex_to_string(Sex s) { return s == Sex::men ? "men" : "women"; }

Sex sex_from_string(const std::string& s) {
  if (s == "men") return Sex::men;
  if (s == "women") return Sex::women;
  throw ValidationError("unknown sex value: " + s);
}

double parse_double_field(const std::string& field, int line, const char* name) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ValidationError("line " + std::to_string(line) + ": malformed " + name + " '" +
                          field + "'");
  }
  return value;
}

long parse_int_field(const std::string& field, int line, const char* name) {
  long value = 0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ValidationError("line " + std::to_string(line) + ": malformed " + name + " '" +
                          field + "'");
  }
  return value;
}

std::vector<PassageEvent> sorted_events(const RaceLog& log) {
  std::vector<PassageEvent> ev = log.events;
  std::sort(ev.begin(), ev.end(), [](const PassageEvent& a, const PassageEvent& b) {
    return std::tie(a.skater_id, a.lap, a.boundary) < std::tie(b.skater_id, b.lap, b.boundary);
  });
  return ev;
}

// Serialization order: chronological, with stable tie-breaks.
std::vector<PassageEvent> serialization_order(const RaceLog& log) {
  std::vector<PassageEvent> ev = log.events;
  std::sort(ev.begin(), ev.end(), [](const PassageEvent& a, const PassageEvent& b) {
    return std::tie(a.time, a.skater_id, a.lap, a.boundary) <
           std::tie(b.time, b.skater_id, b.lap, b.boundary);
  });
  return ev;
}

RaceLog parse_csv(std::istream& input) {
  RaceLog log;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  std::set<std::string> skaters;
  std::set<std::string> race_ids;
  int max_lap = 0;
  int max_boundary = 0;

  while (std::getline(input, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    if (!header_seen) {
      if (trimmed != "race_id,skater_id,lap,boundary,time,observed") {
        throw ValidationError("line " + std::to_string(line_no) +
                              ": expected CSV header race_id,skater_id,lap,boundary,time,observed");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split(trimmed, ',');
    if (fields.size() != 6) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected 6 fields, got " +
                            std::to_string(fields.size()));
    }
    PassageEvent ev;
    race_ids.insert(fields[0]);
    ev.skater_id = fields[1];
    ev.lap = static_cast<int>(parse_int_field(fields[2], line_no, "lap"));
    ev.boundary = static_cast<int>(parse_int_field(fields[3], line_no, "boundary"));
    ev.time = parse_double_field(fields[4], line_no, "time");
    if (fields[5] == "0") {
      ev.observed = false;
    } else if (fields[5] == "1") {
      ev.observed = true;
    } else {
      throw ValidationError("line " + std::to_string(line_no) + ": observed must be 0 or 1");
    }
    skaters.insert(ev.skater_id);
    max_lap = std::max(max_lap, ev.lap);
    max_boundary = std::max(max_boundary, ev.boundary);
    log.events.push_back(std::move(ev));
  }
  if (!header_seen) throw ValidationError("empty CSV input: missing header");
  if (log.events.empty()) throw ValidationError("CSV input has no event rows");
  if (race_ids.size() != 1) {
    throw ValidationError("CSV input mixes " + std::to_string(race_ids.size()) +
                          " race_id values; one race per file");
  }

  // The CSV schema carries events only; meta is inferred from them.
  log.meta.race_id = *race_ids.begin();
  log.meta.n_skaters = static_cast<int>(skaters.size());
  log.meta.n_laps = max_lap;
  log.meta.boundaries_per_lap = max_boundary + 1;
  return log;
}

RaceLog parse_jsonl(std::istream& input) {
  RaceLog log;
  std::string line;
  int line_no = 0;
  bool meta_seen = false;
  bool dq_seen = false;

  while (std::getline(input, line)) {
    ++line_no;
    std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    json obj;
    try {
      obj = json::parse(trimmed);
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (obj.contains("meta")) {
        if (meta_seen) throw ValidationError("duplicate meta object");
        const json& m = obj.at("meta");
        log.meta.race_id = m.at("race_id").get<std::string>();
        log.meta.sex = sex_from_string(m.at("sex").get<std::string>());
        log.meta.n_laps = m.at("n_laps").get<int>();
        log.meta.track_length = m.at("track_length").get<double>();
        log.meta.boundaries_per_lap = m.at("boundaries_per_lap").get<int>();
        log.meta.n_skaters = m.at("n_skaters").get<int>();
        meta_seen = true;
      } else if (obj.contains("dq")) {
        if (dq_seen) throw ValidationError("duplicate dq object");
        for (const json& d : obj.at("dq")) {
          Disqualification dq;
          dq.skater_id = d.at("skater_id").get<std::string>();
          if (d.contains("overtaken_time") && !d.at("overtaken_time").is_null()) {
            dq.overtaken_time = d.at("overtaken_time").get<double>();
          }
          log.disqualifications.push_back(std::move(dq));
        }
        dq_seen = true;
      } else {
        if (!meta_seen) throw ValidationError("event before meta object");
        PassageEvent ev;
        ev.skater_id = obj.at("skater_id").get<std::string>();
        ev.lap = obj.at("lap").get<int>();
        ev.boundary = obj.at("boundary").get<int>();
        ev.time = obj.at("time").get<double>();
        ev.observed = obj.value("observed", true);
        log.events.push_back(std::move(ev));
      }
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!meta_seen) throw ValidationError("JSON-lines input missing leading meta object");
  return log;
}

void serialize_csv(const RaceLog& log, std::ostream& out, const Provenance* prov) {
  if (prov) {
    out << "# peloton " << prov->tool_version << " seed=" << prov->seed
        << " config=" << prov->config_hash << "\n";
  }
  out << "race_id,skater_id,lap,boundary,time,observed\n";
  for (const PassageEvent& ev : serialization_order(log)) {
    out << log.meta.race_id << ',' << ev.skater_id << ',' << ev.lap << ',' << ev.boundary << ','
        << format_fixed(ev.time, 6) << ',' << (ev.observed ? '1' : '0') << '\n';
  }
}

void serialize_jsonl(const RaceLog& log, std::ostream& out, const Provenance* prov) {
  json meta;
  meta["race_id"] = log.meta.race_id;
  meta["sex"] = sex_to_string(log.meta.sex);
  meta["n_laps"] = log.meta.n_laps;
  meta["track_length"] = log.meta.track_length;
  meta["boundaries_per_lap"] = log.meta.boundaries_per_lap;
  meta["n_skaters"] = log.meta.n_skaters;
  if (prov) {
    meta["tool_version"] = prov->tool_version;
    meta["seed"] = prov->seed;
    meta["config_hash"] = prov->config_hash;
  }
  out << json{{"meta", meta}}.dump() << '\n';
  for (const PassageEvent& ev : serialization_order(log)) {
    json j;
    j["skater_id"] = ev.skater_id;
    j["lap"] = ev.lap;
    j["boundary"] = ev.boundary;
    j["time"] = ev.time;
    j["observed"] = ev.observed;
    out << j.dump() << '\n';
  }
  json dqs = json::array();
  for (const Disqualification& dq : log.disqualifications) {
    json d;
    d["skater_id"] = dq.skater_id;
    if (dq.overtaken_time) {
      d["overtaken_time"] = *dq.overtaken_time;
    } else {
      d["overtaken_time"] = nullptr;
    }
    dqs.push_back(std::move(d));
  }
  out << json{{"dq", dqs}}.dump() << '\n';
}

}  // namespace

bool structurally_equal(const RaceLog& a, const RaceLog& b) {
  if (!(a.meta == b.meta)) return false;
  if (a.disqualifications.size() != b.disqualifications.size()) return false;
  auto dq_sorted = [](const RaceLog& l) {
    auto d = l.disqualifications;
    std::sort(d.begin(), d.end(), [](const Disqualification& x, const Disqualification& y) {
      return x.skater_id < y.skater_id;
    });
    return d;
  };
  if (dq_sorted(a) != dq_sorted(b)) return false;
  return sorted_events(a) == sorted_events(b);
}

const RankEntry& RankTable::by_skater(const std::string& skater_id) const {
  for (const RankEntry& e : entries) {
    if (e.skater_id == skater_id) return e;
  }
  throw ValidationError("skater not in rank table: " + skater_id);
}

std::optional<double> SkaterTrack::time_at(int k) const {
  auto it = std::lower_bound(crossings.begin(), crossings.end(), k,
                             [](const Crossing& c, int key) { return c.k < key; });
  if (it == crossings.end() || it->k != k) return std::nullopt;
  return it->time;
}

std::vector<SkaterTrack> build_tracks(const RaceLog& log) {
  std::map<std::string, SkaterTrack> by_id;
  const int bpl = log.meta.boundaries_per_lap;
  for (const PassageEvent& ev : log.events) {
    SkaterTrack& t = by_id[ev.skater_id];
    t.skater_id = ev.skater_id;
    t.crossings.push_back({cumulative_index(ev.lap, ev.boundary, bpl), ev.time, ev.observed});
  }
  std::vector<SkaterTrack> tracks;
  tracks.reserve(by_id.size());
  for (auto& [id, track] : by_id) {
    std::sort(track.crossings.begin(), track.crossings.end(),
              [](const Crossing& a, const Crossing& b) { return a.k < b.k; });
    tracks.push_back(std::move(track));
  }
  return tracks;
}

void validate(const RaceLog& log) {
  const RaceMeta& m = log.meta;
  if (m.n_laps < 1) throw ValidationError("meta: n_laps must be >= 1");
  if (m.boundaries_per_lap < 1) throw ValidationError("meta: boundaries_per_lap must be >= 1");
  if (!(m.track_length > 0)) throw ValidationError("meta: track_length must be > 0");
  if (m.n_skaters < 1 || m.n_skaters > 24) {
    throw ValidationError("meta: n_skaters out of range [1, 24]: " + std::to_string(m.n_skaters));
  }

  std::set<std::string> skaters;
  for (const PassageEvent& ev : log.events) {
    if (ev.lap < 1 || ev.lap > m.n_laps) {
      throw ValidationError("event lap out of range for skater " + ev.skater_id + ": " +
                            std::to_string(ev.lap));
    }
    if (ev.boundary < 0 || ev.boundary >= m.boundaries_per_lap) {
      throw ValidationError("event boundary out of range for skater " + ev.skater_id + ": " +
                            std::to_string(ev.boundary));
    }
    if (!(ev.time >= 0.0) || !std::isfinite(ev.time)) {
      throw ValidationError("event time must be finite and non-negative for skater " +
                            ev.skater_id);
    }
    skaters.insert(ev.skater_id);
  }
  if (static_cast<int>(skaters.size()) != m.n_skaters) {
    throw ValidationError("roster mismatch: events name " + std::to_string(skaters.size()) +
                          " skaters, meta declares " + std::to_string(m.n_skaters));
  }

  const std::vector<PassageEvent> ev = sorted_events(log);
  for (size_t i = 1; i < ev.size(); ++i) {
    const PassageEvent& prev = ev[i - 1];
    const PassageEvent& cur = ev[i];
    if (prev.skater_id != cur.skater_id) continue;
    if (prev.lap == cur.lap && prev.boundary == cur.boundary) {
      throw ValidationError("duplicate event: skater " + cur.skater_id + " lap " +
                            std::to_string(cur.lap) + " boundary " +
                            std::to_string(cur.boundary));
    }
    if (!(cur.time > prev.time)) {
      throw ValidationError("non-monotone times for skater " + cur.skater_id + " at lap " +
                            std::to_string(cur.lap) + " boundary " +
                            std::to_string(cur.boundary));
    }
  }

  std::set<std::string> dq_ids;
  for (const Disqualification& dq : log.disqualifications) {
    if (!skaters.count(dq.skater_id)) {
      throw ValidationError("disqualification references unknown skater_id: " + dq.skater_id);
    }
    if (!dq_ids.insert(dq.skater_id).second) {
      throw ValidationError("duplicate disqualification for skater " + dq.skater_id);
    }
    if (dq.overtaken_time && !(*dq.overtaken_time >= 0.0)) {
      throw ValidationError("negative overtaken_time for skater " + dq.skater_id);
    }
  }
}

RaceLog parse_race_log(std::istream& input, LogFormat format) {
  RaceLog log = format == LogFormat::csv ? parse_csv(input) : parse_jsonl(input);
  validate(log);
  return log;
}

void serialize_race_log(const RaceLog& log, std::ostream& out, LogFormat format,
                        const Provenance* provenance) {
  if (format == LogFormat::csv) {
    serialize_csv(log, out, provenance);
  } else {
    serialize_jsonl(log, out, provenance);
  }
}

RankTable assign_finish_ranks(const RaceLog& log) {
  const int finish_k = cumulative_index(log.meta.n_laps, 0, log.meta.boundaries_per_lap);

  std::unordered_map<std::string, const Disqualification*> dq_of;
  for (const Disqualification& dq : log.disqualifications) dq_of[dq.skater_id] = &dq;

  struct Finisher {
    std::string id;
    double time;
  };
  std::vector<Finisher> finishers;
  std::vector<const Disqualification*> lapped;
  std::vector<const Disqualification*> offences;

  for (const SkaterTrack& track : build_tracks(log)) {
    auto it = dq_of.find(track.skater_id);
    if (it != dq_of.end()) {
      if (it->second->overtaken_time) {
        lapped.push_back(it->second);
      } else {
        offences.push_back(it->second);
      }
      continue;
    }
    std::optional<double> t = track.time_at(finish_k);
    if (!t) {
      throw ValidationError("missing final-lap event for non-disqualified skater " +
                            track.skater_id);
    }
    finishers.push_back({track.skater_id, *t});
  }

  std::sort(finishers.begin(), finishers.end(), [](const Finisher& a, const Finisher& b) {
    return std::tie(a.time, a.id) < std::tie(b.time, b.id);
  });
  // Overtaken later = better rank among lapped skaters.
  std::sort(lapped.begin(), lapped.end(),
            [](const Disqualification* a, const Disqualification* b) {
              return std::tie(*b->overtaken_time, b->skater_id) <
                     std::tie(*a->overtaken_time, a->skater_id);
            });

  RankTable table;
  int rank = 1;
  for (const Finisher& f : finishers) table.entries.push_back({f.id, rank++, 0.0, 0});
  for (const Disqualification* dq : lapped) table.entries.push_back({dq->skater_id, rank++, 0.0, 0});
  for (const Disqualification* dq : offences) table.entries.push_back({dq->skater_id, rank++, 0.0, 0});
  return table;
}

void score_race(const RaceLog& log, RankTable& ranks) {
  std::unordered_map<std::string, RankEntry*> entry_of;
  for (RankEntry& e : ranks.entries) {
    e.points = 0.0;
    entry_of[e.skater_id] = &e;
  }

  static constexpr double kFinishPoints[3] = {60.0, 40.0, 20.0};
  static constexpr double kPremiumPoints[3] = {5.0, 3.0, 1.0};
  static constexpr int kPremiumLaps[3] = {4, 8, 12};

  for (RankEntry& e : ranks.entries) {
    if (e.finish_rank >= 1 && e.finish_rank <= 3) e.points += kFinishPoints[e.finish_rank - 1];
  }

  const std::vector<SkaterTrack> tracks = build_tracks(log);
  for (int premium_lap : kPremiumLaps) {
    if (premium_lap > log.meta.n_laps) continue;
    const int k = cumulative_index(premium_lap, 0, log.meta.boundaries_per_lap);
    struct Crosser {
      double time;
      const std::string* id;
    };
    std::vector<Crosser> crossers;
    for (const SkaterTrack& t : tracks) {
      if (std::optional<double> time = t.time_at(k)) crossers.push_back({*time, &t.skater_id});
    }
    std::sort(crossers.begin(), crossers.end(), [](const Crosser& a, const Crosser& b) {
      return std::tie(a.time, *a.id) < std::tie(b.time, *b.id);
    });
    for (size_t i = 0; i < crossers.size() && i < 3; ++i) {
      auto it = entry_of.find(*crossers[i].id);
      if (it != entry_of.end()) it->second->points += kPremiumPoints[i];
    }
  }

  std::vector<RankEntry*> order;
  order.reserve(ranks.entries.size());
  for (RankEntry& e : ranks.entries) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const RankEntry* a, const RankEntry* b) {
    if (a->points != b->points) return a->points > b->points;
    return a->finish_rank < b->finish_rank;
  });
  int rank = 1;
  for (RankEntry* e : order) e->final_rank = rank++;
}

double normalize_rank(int rank, int n_skaters) {
  if (n_skaters < 1) throw ValidationError("normalize_rank: n_skaters must be positive");
  if (rank < 1 || rank > n_skaters) {
    throw ValidationError("normalize_rank: rank " + std::to_string(rank) +
                          " out of range [1, " + std::to_string(n_skaters) + "]");
  }
  return static_cast<double>(rank) / static_cast<double>(n_skaters);
}

void write_rank_csv(const std::string& race_id, const RankTable& ranks, std::ostream& out) {
  out << "race_id,skater_id,finish_rank,points,final_rank\n";
  for (const RankEntry& e : ranks.entries) {
    out << race_id << ',' << e.skater_id << ',' << e.finish_rank << ','
        << format_fixed(e.points, 0) << ',' << e.final_rank << '\n';
  }
}

}  // namespace peloton::racelog
