#include "qnet/measurement_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace qnet {

double expected_speed(double x_m, const Segment& segment, const SpeedRegimes& regimes) {
  if (x_m <= segment.start_m) return regimes.v_free_mps;
  if (x_m > segment.end_m) return regimes.v_jam_mps;
  const double queued = x_m - segment.start_m;
  const double free = segment.end_m - x_m;
  const double travel_time = queued / regimes.v_jam_mps + free / regimes.v_free_mps;
  return segment.length() / travel_time;
}

std::vector<double> expected_speeds(double x_m, const MeasurementModel& model) {
  std::vector<double> out(model.geometry.segment_count());
  expected_speeds_into(x_m, model, out);
  return out;
}

void expected_speeds_into(double x_m, const MeasurementModel& model,
                          std::span<double> out) {
  for (std::size_t i = 0; i < model.geometry.segments.size(); ++i) {
    out[i] = expected_speed(x_m, model.geometry.segments[i], model.regimes);
  }
}

double segment_speed_derivative(double x_m, const Segment& segment,
                                const SpeedRegimes& regimes) {
  if (x_m < segment.start_m || x_m > segment.end_m) return 0.0;
  // Right-limit convention at x == start_m; interior branch applies on (l, r].
  const double queued = x_m - segment.start_m;
  const double free = segment.end_m - x_m;
  const double travel_time = queued / regimes.v_jam_mps + free / regimes.v_free_mps;
  const double dt_dx = 1.0 / regimes.v_jam_mps - 1.0 / regimes.v_free_mps;
  return -segment.length() * dt_dx / (travel_time * travel_time);
}

std::vector<double> jacobian_h(double x_m, const MeasurementModel& model) {
  std::vector<double> out(model.geometry.segment_count());
  for (std::size_t i = 0; i < model.geometry.segments.size(); ++i) {
    out[i] = segment_speed_derivative(x_m, model.geometry.segments[i], model.regimes);
  }
  return out;
}

namespace {

std::string histogram_to_string(double lo, double bin_width,
                                const std::vector<std::size_t>& counts) {
  std::ostringstream os;
  os << "bin_center_mps,count";
  for (std::size_t i = 0; i < counts.size(); ++i) {
    os << '\n' << (lo + (static_cast<double>(i) + 0.5) * bin_width) << ',' << counts[i];
  }
  return os.str();
}

}  // namespace

SpeedRegimes estimate_regimes(std::span<const double> speeds_mps,
                              const RegimeEstimationOptions& options) {
  if (speeds_mps.size() < options.min_samples) {
    throw DataError("estimate_regimes: need at least " +
                    std::to_string(options.min_samples) + " samples, got " +
                    std::to_string(speeds_mps.size()));
  }
  const auto [lo_it, hi_it] = std::minmax_element(speeds_mps.begin(), speeds_mps.end());
  const double lo = std::floor(*lo_it);
  const double hi = std::ceil(*hi_it);
  const auto bins = static_cast<std::size_t>(
      std::max(1.0, std::ceil((hi - lo) / options.bin_width_mps)));
  std::vector<std::size_t> counts(bins, 0);
  for (double v : speeds_mps) {
    auto b = static_cast<std::size_t>((v - lo) / options.bin_width_mps);
    if (b >= bins) b = bins - 1;
    ++counts[b];
  }

  if (!options.histogram_csv.empty()) {
    std::ofstream out(options.histogram_csv);
    out << histogram_to_string(lo, options.bin_width_mps, counts) << '\n';
  }

  // Local maxima: strictly rising into the bin, non-rising out of it.
  struct Mode {
    double center;
    std::size_t count;
  };
  std::vector<Mode> maxima;
  for (std::size_t i = 0; i < bins; ++i) {
    const std::size_t left = (i == 0) ? 0 : counts[i - 1];
    const std::size_t right = (i + 1 == bins) ? 0 : counts[i + 1];
    if (counts[i] > 0 && counts[i] >= left && counts[i] > right) {
      maxima.push_back(
          {lo + (static_cast<double>(i) + 0.5) * options.bin_width_mps, counts[i]});
    }
  }
  std::sort(maxima.begin(), maxima.end(),
            [](const Mode& a, const Mode& b) { return a.count > b.count; });

  // Tallest mode, then the tallest remaining one far enough away from it.
  for (std::size_t a = 0; a < maxima.size(); ++a) {
    for (std::size_t b = a + 1; b < maxima.size(); ++b) {
      if (std::abs(maxima[a].center - maxima[b].center) >=
          options.min_mode_separation_mps) {
        SpeedRegimes regimes;
        regimes.v_jam_mps = std::min(maxima[a].center, maxima[b].center);
        regimes.v_free_mps = std::max(maxima[a].center, maxima[b].center);
        regimes.validate();
        return regimes;
      }
    }
    // Only continue past the tallest mode if it had no qualifying partner.
    break;
  }
  throw NumericError(
      "estimate_regimes: speed distribution has no two dominant modes separated by " +
      std::to_string(options.min_mode_separation_mps) + " m/s; histogram:\n" +
      histogram_to_string(lo, options.bin_width_mps, counts));
}

}  // namespace qnet
