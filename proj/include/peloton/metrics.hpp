#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "peloton/racelog.hpp"

namespace peloton::metrics {

struct DraftingParams {
  double gap_threshold = 0.2;        // seconds; gap <= threshold means sheltered
  double equivalent_distance = 2.5;  // meters, informational only
};

// Time span from the first skater completing lap n_laps-3 to the first
// skater completing lap n_laps-1.
struct AnalysisWindow {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
};

struct ExposureSummary {
  std::string skater_id;
  double tau = 0.0;
  AnalysisWindow window;
  double imputed_fraction = 0.0;  // share of tau from segments starting at unobserved crossings
};

// Two independent measurements of the same exposed time.
struct CheckerPair {
  double tau_1 = 0.0;
  double tau_2 = 0.0;
};

enum class RaceType { breakaway, bunch };

// Time intervals during which a skater was visible to the camera.
using VisibilityIntervals = std::vector<std::pair<double, double>>;
using VisibilityMask = std::map<std::string, VisibilityIntervals>;

AnalysisWindow analysis_window(const racelog::RaceLog& log);

// A skater is sheltered at a boundary iff some other skater crossed the same
// boundary earlier with a time difference <= gap_threshold (a gap exactly at
// the threshold still shelters). Evaluates stored times, imputed or not.
bool is_sheltered(const racelog::RaceLog& log, const std::string& skater_id, int lap,
                  int boundary, const DraftingParams& params = {});

// Total time the skater leads a group (or skates solo) inside the analysis
// window. Each boundary-to-boundary segment counts with its within-window
// clip when the skater is exposed at the segment's starting crossing; at
// unobserved crossings the exposure state carries forward from the previous
// crossing and is re-evaluated at the next observed one.
ExposureSummary exposed_time(const racelog::RaceLog& log, const std::string& skater_id,
                             const DraftingParams& params = {});

// Applies a camera-visibility mask: events outside the skater's visible
// intervals are flagged observed=false and their times replaced by linear
// interpolation (in crossing index) between the bracketing observed
// crossings. Skaters absent from the mask are fully visible.
racelog::RaceLog impute_carry_forward(const racelog::RaceLog& log, const VisibilityMask& mask);

// Crossing-time order at boundary 0 with laps_to_finish laps remaining.
std::map<std::string, int> intermediate_ranks(const racelog::RaceLog& log, int laps_to_finish);

// Dual-checker reconciliation of a rank: adopt on agreement, else average.
double reconcile_rank(double rank_1, double rank_2);

// Returns the average when the relative discrepancy D = |t1-t2|/(t1+t2) is
// below tolerance, std::nullopt when the checkers must remeasure.
// t1 = t2 = 0 counts as perfect agreement.
std::optional<double> reconcile_checkers(const CheckerPair& pair, double tolerance = 0.1);

// Breakaway iff for some position n in {1,2,3} the gap between the nth and
// (n+1)th skater exceeds breakaway_gap at every boundary crossing set from
// (n_laps-2, 0) through (n_laps-1, 0).
RaceType classify_breakaway(const racelog::RaceLog& log, double breakaway_gap = 2.0);

// One row per skater per race; the file contract with the stats module.
struct MetricsRow {
  std::string race_id;
  std::string skater_id;
  double tau = 0.0;
  double imputed_fraction = 0.0;
  int rank_l3 = 0;
  int rank_l2 = 0;
  int rank_l1 = 0;
  int finish_rank = 0;
  double norm_finish_rank = 0.0;
  bool breakaway = false;
};

// Rows are emitted for skaters with crossings at all three rank boundaries;
// disqualified skaters missing them are left out, matching the manual
// protocol in which lapped skaters leave the ice.
std::vector<MetricsRow> compute_race_metrics(const racelog::RaceLog& log,
                                             const DraftingParams& params = {},
                                             double breakaway_gap = 2.0);

void write_metrics_csv(const std::vector<MetricsRow>& rows, std::ostream& out,
                       const std::string& provenance_comment = "");
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

}  // namespace peloton::metrics
