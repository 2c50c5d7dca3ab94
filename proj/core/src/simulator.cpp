#include "qnet/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "qnet/measurement_model.hpp"

namespace qnet {

double rate_at(const std::vector<RatePoint>& profile, double t_offset_s) {
  if (profile.empty()) return 0.0;
  if (t_offset_s <= profile.front().t_offset_s) return profile.front().rate_veh_s;
  for (std::size_t i = 1; i < profile.size(); ++i) {
    if (t_offset_s <= profile[i].t_offset_s) {
      const double span = profile[i].t_offset_s - profile[i - 1].t_offset_s;
      if (span <= 0.0) return profile[i].rate_veh_s;
      const double w = (t_offset_s - profile[i - 1].t_offset_s) / span;
      return profile[i - 1].rate_veh_s +
             w * (profile[i].rate_veh_s - profile[i - 1].rate_veh_s);
    }
  }
  return profile.back().rate_veh_s;
}

void ScenarioConfig::validate() const {
  geometry.validate();
  regimes.validate();
  if (steps == 0) throw DataError("scenario: steps must be > 0");
  for (const auto& p : demand) {
    if (p.rate_veh_s < 0.0) throw DataError("scenario: demand rate must be >= 0");
  }
  for (const auto& p : lambda_unobserved) {
    if (p.rate_veh_s < 0.0) throw DataError("scenario: unobserved rate must be >= 0");
  }
  if (!(signal.cycle_s > 0.0)) throw DataError("scenario: cycle_s must be > 0");
  if (!(signal.green_ratio > 0.0 && signal.green_ratio < 1.0)) {
    throw DataError("scenario: green_ratio must lie in (0, 1)");
  }
  if (!(saturation_rate_veh_s_lane > 0.0)) {
    throw DataError("scenario: saturation rate must be > 0");
  }
  if (!(jam_spacing_m > 0.0)) throw DataError("scenario: jam_spacing_m must be > 0");
  if (!(free_density_veh_m_lane > 0.0) || free_density_veh_m_lane >= k_jam()) {
    throw DataError("scenario: need 0 < k_free < k_jam");
  }
  if (afcd_noise_sd_mps < 0.0 || afcd_delay_s < 0.0) {
    throw DataError("scenario: aFCD noise/delay must be >= 0");
  }
  if (missing_prob < 0.0 || missing_prob >= 1.0) {
    throw DataError("scenario: missing_prob must lie in [0, 1)");
  }
}

namespace {

/// Arrival stream with a per-second rate; Poisson draws or a deterministic
/// fractional accumulator.
class ArrivalStream {
 public:
  ArrivalStream(ArrivalProcess process, std::mt19937_64& rng)
      : process_(process), rng_(&rng) {}

  int draw(double rate_per_tick) {
    if (rate_per_tick <= 0.0) return 0;
    if (process_ == ArrivalProcess::poisson) {
      std::poisson_distribution<int> dist(rate_per_tick);
      return dist(*rng_);
    }
    acc_ += rate_per_tick;
    const int k = static_cast<int>(std::floor(acc_));
    acc_ -= k;
    return k;
  }

 private:
  ArrivalProcess process_;
  std::mt19937_64* rng_;
  double acc_ = 0.0;
};

}  // namespace

EventLog simulate_events(const ScenarioConfig& scenario, std::mt19937_64& rng) {
  const std::size_t steps = scenario.steps;
  EventLog log;
  log.cum_observed_arrivals.assign(steps, 0.0);
  log.cum_unobserved.assign(steps, 0.0);
  log.queued_veh.assign(steps, 0.0);

  ArrivalStream observed(scenario.arrivals, rng);
  ArrivalStream unobserved(scenario.arrivals, rng);

  long long cum_obs = 0;
  long long cum_unobs = 0;
  long long queued = 0;
  double discharge_credit = 0.0;

  log.cum_observed_arrivals[0] = 0.0;
  log.cum_unobserved[0] = 0.0;
  log.queued_veh[0] = 0.0;

  const double green_window = scenario.signal.green_ratio * scenario.signal.cycle_s;
  const auto total_seconds = static_cast<long long>(steps - 1) * kBaseStepSeconds;
  for (long long sec = 1; sec <= total_seconds; ++sec) {
    const double tick_start = static_cast<double>(sec - 1);
    const double phase =
        std::fmod(tick_start + scenario.signal.offset_s, scenario.signal.cycle_s);
    const bool green = phase < green_window;

    if (green) {
      discharge_credit +=
          scenario.saturation_rate_veh_s_lane * scenario.geometry.lanes;
      const auto can_leave = static_cast<long long>(std::floor(discharge_credit));
      const long long leaving = std::min(queued, can_leave);
      queued -= leaving;
      discharge_credit -= static_cast<double>(leaving);
    } else {
      discharge_credit = 0.0;
    }

    const int obs = observed.draw(rate_at(scenario.demand, tick_start));
    const int unobs = unobserved.draw(rate_at(scenario.lambda_unobserved, tick_start));
    cum_obs += obs;
    cum_unobs += unobs;
    if (!green || queued > 0) queued += obs;  // else free flow straight through

    if (sec % kBaseStepSeconds == 0) {
      const auto step = static_cast<std::size_t>(sec / kBaseStepSeconds);
      log.cum_observed_arrivals[step] = static_cast<double>(cum_obs);
      log.cum_unobserved[step] = static_cast<double>(cum_unobs);
      log.queued_veh[step] = static_cast<double>(queued);
    }
  }
  return log;
}

void emit_counts(const EventLog& events, const ScenarioConfig& scenario, SensorDay& day,
                 SimDiagnostics& diagnostics) {
  const std::size_t steps = scenario.steps;
  const double lanes = scenario.geometry.lanes;
  const double spacing_kf = scenario.jam_spacing_m * scenario.free_density_veh_m_lane;
  const double standing =
      std::floor(rate_at(scenario.demand, 0.0) * scenario.geometry.length_m /
                     scenario.regimes.v_free_mps +
                 0.5);

  day.cum_inflow.assign(steps, 0.0);
  day.cum_outflow.assign(steps, 0.0);
  std::vector<double> truth(steps, 0.0);
  double d_prev = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double queued = events.queued_veh[i];
    day.cum_inflow[i] = standing + events.cum_observed_arrivals[i] + events.cum_unobserved[i];
    // Stop-line count by conservation: the free region stays at k_free, so
    // a queued vehicle displaces jam_spacing * k_free of it.
    const double z = events.cum_observed_arrivals[i] - queued * (1.0 - spacing_kf);
    const double d = std::max(d_prev, std::max(0.0, std::floor(z + 0.5)));
    day.cum_outflow[i] = d;
    d_prev = d;
    truth[i] = clamp_queue(queued * scenario.jam_spacing_m / lanes,
                           scenario.geometry.q_max_m);
  }
  day.ground_truth_m = std::move(truth);
  diagnostics.standing_free_veh = standing;
  diagnostics.queued_veh = events.queued_veh;
  diagnostics.unobserved_cum = events.cum_unobserved;
}

AfcdSeries emit_afcd(const std::vector<double>& truth_m, const ScenarioConfig& scenario,
                     std::mt19937_64& rng) {
  const std::size_t steps = truth_m.size();
  const std::size_t intervals = (steps + kStepsPerAfcdInterval - 1) / kStepsPerAfcdInterval;
  const std::size_t segments = scenario.geometry.segment_count();

  // Interval-mean queue, then the clean two-regime speeds.
  std::vector<double> mean_queue(intervals, 0.0);
  for (std::size_t k = 0; k < intervals; ++k) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t t = k * kStepsPerAfcdInterval;
         t < std::min(steps, (k + 1) * kStepsPerAfcdInterval); ++t) {
      acc += truth_m[t];
      ++n;
    }
    mean_queue[k] = acc / static_cast<double>(n);
  }

  const auto delay_intervals = static_cast<std::size_t>(
      std::llround(scenario.afcd_delay_s / kAfcdIntervalSeconds));

  AfcdSeries out(segments, std::vector<std::optional<double>>(intervals));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double clip_lo = 0.5 * scenario.regimes.v_jam_mps;
  const double clip_hi = 1.2 * scenario.regimes.v_free_mps;
  for (std::size_t k = 0; k < intervals; ++k) {
    const std::size_t source = k >= delay_intervals ? k - delay_intervals : 0;
    for (std::size_t s = 0; s < segments; ++s) {
      double speed = expected_speed(mean_queue[source], scenario.geometry.segments[s],
                                    scenario.regimes);
      if (scenario.afcd_noise_sd_mps > 0.0) {
        speed += scenario.afcd_noise_sd_mps * noise(rng);
        speed = std::clamp(speed, clip_lo, clip_hi);
      }
      const bool drop =
          scenario.missing_prob > 0.0 && uniform(rng) < scenario.missing_prob;
      if (!drop) out[s][k] = speed;
    }
  }
  return out;
}

SimOutput simulate_day(const ScenarioConfig& scenario) {
  scenario.validate();
  std::mt19937_64 rng(scenario.seed);

  SimOutput out;
  out.day.step_s = kBaseStepSeconds;
  out.day.t0 = scenario.t0;

  const auto events = simulate_events(scenario, rng);
  emit_counts(events, scenario, out.day, out.diagnostics);
  out.day.afcd_speeds = emit_afcd(*out.day.ground_truth_m, scenario, rng);

  double lambda_acc = 0.0;
  const auto horizon = static_cast<double>(scenario.steps - 1) * kBaseStepSeconds;
  for (std::size_t i = 0; i < scenario.steps; ++i) {
    lambda_acc += rate_at(scenario.lambda_unobserved,
                          static_cast<double>(i) * kBaseStepSeconds);
  }
  out.diagnostics.mean_lambda_veh_s =
      horizon > 0.0 ? lambda_acc / static_cast<double>(scenario.steps) : 0.0;

  out.day.validate();
  return out;
}

// --- scenario JSON ----------------------------------------------------------

namespace {

std::vector<RatePoint> rate_profile_from_json(const nlohmann::json& j) {
  std::vector<RatePoint> profile;
  if (j.is_number()) {
    profile.push_back({0.0, j.get<double>()});
    return profile;
  }
  for (const auto& item : j) {
    profile.push_back({item.at(0).get<double>(), item.at(1).get<double>()});
  }
  return profile;
}

nlohmann::json rate_profile_to_json(const std::vector<RatePoint>& profile) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : profile) j.push_back({p.t_offset_s, p.rate_veh_s});
  return j;
}

}  // namespace

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenario '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("scenario '" + path.string() + "': " + e.what());
  }
  ScenarioConfig s;
  try {
    const auto& sec = j.at("section");
    s.geometry.section_id = sec.value("section_id", std::string("sim"));
    s.geometry.length_m = sec.at("length_m").get<double>();
    s.geometry.lanes = sec.at("lanes").get<int>();
    s.geometry.q_max_m = sec.at("q_max_m").get<double>();
    const auto bounds = sec.at("segment_bounds").get<std::vector<double>>();
    if (bounds.size() < 2) throw DataError("scenario: segment_bounds too short");
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
      s.geometry.segments.push_back({bounds[i], bounds[i + 1]});
    }
    s.regimes.v_free_mps = sec.at("v_free_mps").get<double>();
    s.regimes.v_jam_mps = sec.at("v_jam_mps").get<double>();
    s.t0 = parse_iso_datetime(j.value("t0", std::string("2023-11-10T06:00:00")));
    s.steps = j.value("steps", kDefaultDaySteps);
    s.demand = rate_profile_from_json(j.at("demand_veh_s"));
    if (j.contains("lambda_unobserved_veh_s")) {
      s.lambda_unobserved = rate_profile_from_json(j.at("lambda_unobserved_veh_s"));
    }
    if (j.contains("signal")) {
      const auto& sig = j.at("signal");
      s.signal.cycle_s = sig.value("cycle_s", s.signal.cycle_s);
      s.signal.green_ratio = sig.value("green_ratio", s.signal.green_ratio);
      s.signal.offset_s = sig.value("offset_s", s.signal.offset_s);
    }
    const auto process = j.value("arrival_process", std::string("poisson"));
    if (process == "poisson") {
      s.arrivals = ArrivalProcess::poisson;
    } else if (process == "regular") {
      s.arrivals = ArrivalProcess::regular;
    } else {
      throw DataError("scenario: arrival_process must be poisson or regular");
    }
    s.saturation_rate_veh_s_lane =
        j.value("saturation_rate_veh_s_lane", s.saturation_rate_veh_s_lane);
    s.jam_spacing_m = j.value("jam_spacing_m", s.jam_spacing_m);
    s.free_density_veh_m_lane =
        j.value("free_density_veh_m_lane", s.free_density_veh_m_lane);
    s.afcd_noise_sd_mps = j.value("afcd_noise_sd_mps", s.afcd_noise_sd_mps);
    s.afcd_delay_s = j.value("afcd_delay_s", s.afcd_delay_s);
    s.missing_prob = j.value("missing_prob", s.missing_prob);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("scenario '" + path.string() + "': " + e.what());
  }
  s.validate();
  return s;
}

void save_scenario(const std::filesystem::path& path, const ScenarioConfig& s) {
  nlohmann::json j;
  nlohmann::json sec;
  sec["section_id"] = s.geometry.section_id;
  sec["length_m"] = s.geometry.length_m;
  sec["lanes"] = s.geometry.lanes;
  sec["q_max_m"] = s.geometry.q_max_m;
  std::vector<double> bounds;
  bounds.push_back(s.geometry.segments.front().start_m);
  for (const auto& seg : s.geometry.segments) bounds.push_back(seg.end_m);
  sec["segment_bounds"] = bounds;
  sec["v_free_mps"] = s.regimes.v_free_mps;
  sec["v_jam_mps"] = s.regimes.v_jam_mps;
  j["section"] = sec;
  j["t0"] = format_iso_datetime(s.t0);
  j["steps"] = s.steps;
  j["demand_veh_s"] = rate_profile_to_json(s.demand);
  j["lambda_unobserved_veh_s"] = rate_profile_to_json(s.lambda_unobserved);
  j["signal"] = {{"cycle_s", s.signal.cycle_s},
                 {"green_ratio", s.signal.green_ratio},
                 {"offset_s", s.signal.offset_s}};
  j["arrival_process"] = s.arrivals == ArrivalProcess::poisson ? "poisson" : "regular";
  j["saturation_rate_veh_s_lane"] = s.saturation_rate_veh_s_lane;
  j["jam_spacing_m"] = s.jam_spacing_m;
  j["free_density_veh_m_lane"] = s.free_density_veh_m_lane;
  j["afcd_noise_sd_mps"] = s.afcd_noise_sd_mps;
  j["afcd_delay_s"] = s.afcd_delay_s;
  j["missing_prob"] = s.missing_prob;
  j["seed"] = s.seed;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scenario '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

}  // namespace qnet
