#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace peloton::racelog {

enum class Sex { men, women };
enum class LogFormat { csv, jsonl };

struct RaceMeta {
  std::string race_id;
  Sex sex = Sex::men;
  int n_laps = 16;
  double track_length = 400.0;
  int boundaries_per_lap = 4;
  int n_skaters = 0;

  bool operator==(const RaceMeta&) const = default;
};

// One skater crossing one of the oval's straight/curve boundaries.
// Boundary 0 is the finish line; a boundary-0 event with lap L is the
// crossing that completes lap L, and events (L, b) with b >= 1 are the
// mid-lap boundaries crossed after completing lap L. Ordering events by
// (lap, boundary) is therefore chronological, and the finish of an
// n-lap race is the event (n_laps, 0).
struct PassageEvent {
  std::string skater_id;
  int lap = 0;
  int boundary = 0;
  double time = 0.0;  // seconds from race start
  bool observed = true;

  bool operator==(const PassageEvent&) const = default;
};

// overtaken_time is the moment the leader lapped the skater; a missing
// value marks a disqualification for an offence, which ranks strictly worst.
struct Disqualification {
  std::string skater_id;
  std::optional<double> overtaken_time;

  bool operator==(const Disqualification&) const = default;
};

struct RaceLog {
  RaceMeta meta;
  std::vector<PassageEvent> events;
  std::vector<Disqualification> disqualifications;
};

// Structural equality: event order in the container is not significant.
bool structurally_equal(const RaceLog& a, const RaceLog& b);

struct RankEntry {
  std::string skater_id;
  int finish_rank = 0;
  double points = 0.0;
  int final_rank = 0;
};

// Entries sorted by finish_rank.
struct RankTable {
  std::vector<RankEntry> entries;

  const RankEntry& by_skater(const std::string& skater_id) const;
};

// Provenance fields embedded in serialized artifacts (comment line in CSV,
// extra meta keys in JSON-lines). Ignored for structural equality.
struct Provenance {
  std::string tool_version;
  std::string seed;
  std::string config_hash;
};

// Cumulative crossing coordinate: boundary-0 of lap L has index L*bpl.
inline int cumulative_index(int lap, int boundary, int boundaries_per_lap) {
  return lap * boundaries_per_lap + boundary;
}

struct Crossing {
  int k = 0;  // cumulative index
  double time = 0.0;
  bool observed = true;
};

// Per-skater crossings sorted by cumulative index.
struct SkaterTrack {
  std::string skater_id;
  std::vector<Crossing> crossings;

  std::optional<double> time_at(int k) const;
};

// Tracks sorted by skater_id.
std::vector<SkaterTrack> build_tracks(const RaceLog& log);

// Structural validation: meta invariants, event ranges, per-skater time
// monotonicity, duplicate events, roster consistency, DQ references.
// Completeness through the finish is checked by assign_finish_ranks, since
// the CSV schema cannot carry the disqualification list.
void validate(const RaceLog& log);

RaceLog parse_race_log(std::istream& input, LogFormat format);
void serialize_race_log(const RaceLog& log, std::ostream& out, LogFormat format,
                        const Provenance* provenance = nullptr);

// Finish ranks: non-disqualified skaters by time at (n_laps, 0) ascending;
// lapped DQs fill the worst ranks, earlier overtaken = worse; offence DQs
// take the very worst ranks.
RankTable assign_finish_ranks(const RaceLog& log);

// Mass start scoring: 60/40/20 points to finish ranks 1..3, premiums 5/3/1
// to the first three skaters completing laps 4, 8 and 12. final_rank orders
// by total points descending with finish_rank as tie-break.
void score_race(const RaceLog& log, RankTable& ranks);

double normalize_rank(int rank, int n_skaters);

void write_rank_csv(const std::string& race_id, const RankTable& ranks, std::ostream& out);

}  // namespace peloton::racelog
