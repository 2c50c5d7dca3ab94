#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

/// Piecewise-linear rate profile point: offset from day start, vehicles/s.
struct RatePoint {
  double t_offset_s = 0.0;
  double rate_veh_s = 0.0;
};

double rate_at(const std::vector<RatePoint>& profile, double t_offset_s);

struct SignalTiming {
  double cycle_s = 90.0;
  double green_ratio = 0.45;
  double offset_s = 0.0;  // shifts the phase; green runs first by default
};

enum class ArrivalProcess { poisson, regular };

struct ScenarioConfig {
  SectionGeometry geometry;
  SpeedRegimes regimes;
  std::int64_t t0 = 0;
  std::size_t steps = kDefaultDaySteps;
  std::vector<RatePoint> demand;              // observed inflow, veh/s
  std::vector<RatePoint> lambda_unobserved;   // unobserved exits, veh/s
  SignalTiming signal;
  ArrivalProcess arrivals = ArrivalProcess::poisson;
  double saturation_rate_veh_s_lane = 0.5;
  double jam_spacing_m = 7.5;                 // 1 / k_jam per lane
  double free_density_veh_m_lane = 0.02;      // k_free used in count bookkeeping
  double afcd_noise_sd_mps = 0.0;
  double afcd_delay_s = 0.0;
  double missing_prob = 0.0;
  std::uint64_t seed = 1;

  void validate() const;
  double k_jam() const { return 1.0 / jam_spacing_m; }
};

ScenarioConfig load_scenario(const std::filesystem::path& path);
void save_scenario(const std::filesystem::path& path, const ScenarioConfig& scenario);

/// Hidden per-day bookkeeping exposed for verification.
struct SimDiagnostics {
  double standing_free_veh = 0.0;       // occupancy credited to A at day start
  double mean_lambda_veh_s = 0.0;       // day-average unobserved rate
  std::vector<double> queued_veh;       // per 10 s step
  std::vector<double> unobserved_cum;   // per 10 s step, vehicles
};

struct SimOutput {
  SensorDay day;
  SimDiagnostics diagnostics;
};

/// 1 s tick event log of the point-queue dynamics, sampled on the 10 s grid.
struct EventLog {
  std::vector<double> cum_observed_arrivals;  // per 10 s step
  std::vector<double> cum_unobserved;         // per 10 s step
  std::vector<double> queued_veh;             // per 10 s step
};

EventLog simulate_events(const ScenarioConfig& scenario, std::mt19937_64& rng);

/// Cumulative counts from the event log. The upstream detector counts every
/// arrival (observed and unobserved) plus the standing free-flow occupancy
/// at day start; the stop-line count follows vehicle conservation with the
/// free region held at k_free, rounded to whole vehicles.
void emit_counts(const EventLog& events, const ScenarioConfig& scenario, SensorDay& day,
                 SimDiagnostics& diagnostics);

/// 60 s segment speeds from the true queue: two-regime expected speed of the
/// interval-mean queue, delayed by afcd_delay_s, Gaussian noise clipped to
/// [0.5 v_jam, 1.2 v_free], entries dropped with missing_prob.
AfcdSeries emit_afcd(const std::vector<double>& truth_m, const ScenarioConfig& scenario,
                     std::mt19937_64& rng);

SimOutput simulate_day(const ScenarioConfig& scenario);

}  // namespace qnet
