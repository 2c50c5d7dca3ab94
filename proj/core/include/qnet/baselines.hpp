#pragma once

#include <span>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

inline constexpr double kKmhPerMps = 3.6;
inline constexpr double kOsdThresholdKmh = 16.0;
inline const std::vector<double> kIscThresholdsKmh = {14.0, 16.0, 18.0, 20.0, 22.0};

/// Observed-speed-drop estimate for one step. Finds the farthest segment
/// boundary whose downstream neighbour is below the threshold while the
/// upstream one is at or above it; q_max when every segment is below, 0 when
/// no boundary qualifies. Speeds in m/s, threshold in km/h.
double osd_estimate(std::span<const double> speeds_mps, const SectionGeometry& geometry,
                    double threshold_kmh = kOsdThresholdKmh);

/// osd_estimate applied to every step of an expanded (10 s) speed matrix.
std::vector<double> osd_series(const std::vector<std::vector<double>>& speeds_mps,
                               const SectionGeometry& geometry,
                               double threshold_kmh = kOsdThresholdKmh);

struct IscOptions {
  std::vector<double> thresholds_kmh = kIscThresholdsKmh;
  double fine_grid_m = 1.0;
};

/// Iso-speed-contour estimate over a full day of 60 s aFCD (gap-free,
/// [segment][interval]). The speed field is sampled on a fine space-time
/// grid - per-segment constant in space, linear in time between interval
/// stamps - and for each threshold the farthest below-threshold position is
/// taken per 10 s step; the estimate is the mean across thresholds, 0 when
/// nothing lies below a threshold.
std::vector<double> isc_estimate(const std::vector<std::vector<double>>& afcd_mps,
                                 const SectionGeometry& geometry, std::size_t steps,
                                 const IscOptions& options = {});

}  // namespace qnet
