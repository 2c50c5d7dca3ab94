#include "qnet/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace qnet {

double osd_estimate(std::span<const double> speeds_mps, const SectionGeometry& geometry,
                    double threshold_kmh) {
  const std::size_t n = geometry.segment_count();
  if (speeds_mps.size() != n) {
    throw DataError("osd_estimate: speed count differs from segment count");
  }
  const double threshold_mps = threshold_kmh / kKmhPerMps;
  bool all_below = true;
  double farthest = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (speeds_mps[i] >= threshold_mps) all_below = false;
    if (i + 1 < n && speeds_mps[i] < threshold_mps && speeds_mps[i + 1] >= threshold_mps) {
      farthest = geometry.segments[i].end_m;  // boundary between i and i+1
    }
  }
  if (all_below) return geometry.q_max_m;
  if (farthest >= 0.0) return farthest;
  return 0.0;
}

std::vector<double> osd_series(const std::vector<std::vector<double>>& speeds_mps,
                               const SectionGeometry& geometry, double threshold_kmh) {
  if (speeds_mps.empty()) throw DataError("osd_series: empty speed matrix");
  const std::size_t steps = speeds_mps.front().size();
  std::vector<double> out(steps);
  std::vector<double> column(speeds_mps.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t s = 0; s < speeds_mps.size(); ++s) column[s] = speeds_mps[s][t];
    out[t] = osd_estimate(column, geometry, threshold_kmh);
  }
  return out;
}

std::vector<double> isc_estimate(const std::vector<std::vector<double>>& afcd_mps,
                                 const SectionGeometry& geometry, std::size_t steps,
                                 const IscOptions& options) {
  const std::size_t segments = geometry.segment_count();
  if (afcd_mps.size() != segments) {
    throw DataError("isc_estimate: aFCD segment count differs from geometry");
  }
  if (afcd_mps.empty() || afcd_mps.front().empty()) {
    throw DataError("isc_estimate: empty day matrix");
  }
  const std::size_t intervals = afcd_mps.front().size();
  if (options.thresholds_kmh.empty()) throw DataError("isc_estimate: no thresholds");

  // Fine space grid over the instrumented span, sampled at cell centers.
  const double span_end = geometry.segments.back().end_m;
  const auto cells = static_cast<std::size_t>(std::ceil(span_end / options.fine_grid_m));
  std::vector<std::size_t> cell_segment(cells);
  for (std::size_t c = 0, seg = 0; c < cells; ++c) {
    const double pos = (static_cast<double>(c) + 0.5) * options.fine_grid_m;
    while (seg + 1 < segments && pos >= geometry.segments[seg].end_m) ++seg;
    cell_segment[c] = seg;
  }

  std::vector<double> out(steps, 0.0);
  std::vector<double> column(segments);
  for (std::size_t t = 0; t < steps; ++t) {
    // Linear time interpolation between interval stamps.
    const double tau = static_cast<double>(t) / kStepsPerAfcdInterval;
    const auto k0 = std::min(static_cast<std::size_t>(tau), intervals - 1);
    const auto k1 = std::min(k0 + 1, intervals - 1);
    const double w = tau - static_cast<double>(k0);
    for (std::size_t s = 0; s < segments; ++s) {
      column[s] = (1.0 - w) * afcd_mps[s][k0] + w * afcd_mps[s][k1];
    }
    double sum = 0.0;
    for (double threshold_kmh : options.thresholds_kmh) {
      const double threshold_mps = threshold_kmh / kKmhPerMps;
      double contour = 0.0;
      for (std::size_t c = cells; c-- > 0;) {
        if (column[cell_segment[c]] < threshold_mps) {
          contour = (static_cast<double>(c) + 0.5) * options.fine_grid_m;
          break;
        }
      }
      sum += contour;
    }
    out[t] = sum / static_cast<double>(options.thresholds_kmh.size());
  }
  return out;
}

}  // namespace qnet
