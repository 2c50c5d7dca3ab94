#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qnet {

/// Malformed or inconsistent input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numeric failure at run time: degenerate fits, non-finite values (CLI exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- timestamps ---------------------------------------------------------
//
// Timestamps are naive local wall-clock values ("YYYY-MM-DDTHH:MM:SS"),
// stored as seconds since 1970-01-01T00:00:00 with no timezone applied.

std::int64_t parse_iso_datetime(std::string_view iso);
std::string format_iso_datetime(std::int64_t t);

/// Seconds since local midnight for a timestamp.
int seconds_of_day(std::int64_t t);

// --- core series constants ----------------------------------------------

inline constexpr int kBaseStepSeconds = 10;
inline constexpr int kAfcdIntervalSeconds = 60;
inline constexpr int kStepsPerAfcdInterval = kAfcdIntervalSeconds / kBaseStepSeconds;
inline constexpr std::size_t kDefaultDaySteps = 5040;  // 06:00-20:00 at 10 s

// --- domain types ---------------------------------------------------------

/// One aFCD segment span, positions in meters measured from the stop line.
struct Segment {
  double start_m = 0.0;
  double end_m = 0.0;
  double length() const { return end_m - start_m; }
};

struct SectionGeometry {
  std::string section_id;
  double length_m = 0.0;
  int lanes = 1;
  std::vector<Segment> segments;  // contiguous, ordered from the stop line
  double q_max_m = 0.0;

  std::size_t segment_count() const { return segments.size(); }
  void validate() const;  // throws DataError on invariant violations
};

/// Two-regime speeds: free-flow outside the queue, jam speed inside it.
struct SpeedRegimes {
  double v_free_mps = 0.0;
  double v_jam_mps = 0.0;
  void validate() const;
};

/// Per-segment 60 s speed series; missing entries not yet imputed.
using AfcdSeries = std::vector<std::vector<std::optional<double>>>;

/// Aligned per-day sensor record. Counts and ground truth run on the 10 s
/// base grid; aFCD speeds run on the 60 s grid.
struct SensorDay {
  int step_s = kBaseStepSeconds;
  std::int64_t t0 = 0;
  std::vector<double> cum_inflow;   // A_t, cumulative vehicles
  std::vector<double> cum_outflow;  // D_t, cumulative vehicles
  AfcdSeries afcd_speeds;           // [segment][interval], m/s
  std::optional<std::vector<double>> ground_truth_m;

  std::size_t steps() const { return cum_inflow.size(); }
  std::size_t afcd_intervals() const {
    return afcd_speeds.empty() ? 0 : afcd_speeds.front().size();
  }
  std::int64_t time_at(std::size_t step) const {
    return t0 + static_cast<std::int64_t>(step) * step_s;
  }
  void validate() const;
};

/// Per-step record of one filter run.
struct FilterTrace {
  std::vector<double> prior_m;
  std::vector<double> posterior_m;
  std::vector<std::vector<double>> predicted_speeds;      // [step][segment]
  std::vector<std::vector<std::vector<double>>> gains;    // [step][group][...]
};

// --- operations -----------------------------------------------------------

/// min(max(x, 0), q_max). Requires q_max > 0.
double clamp_queue(double x_m, double q_max_m);

/// Replicates each 60 s value over its six 10 s steps.
/// Requires 6*(intervals-1) < steps <= 6*intervals (one trailing partial
/// interval at most); anything else is an alignment error.
std::vector<std::vector<double>> expand_afcd(
    const std::vector<std::vector<double>>& afcd, std::size_t steps);

/// Forward-fills gaps from the most recent present value; a leading gap is
/// back-filled from the first present value. A series with no present value
/// at all is a data error.
std::vector<double> impute_missing(std::span<const std::optional<double>> series);
std::vector<std::vector<double>> impute_missing(const AfcdSeries& series);

}  // namespace qnet
