#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

/// Nonlinear map from queue length to expected per-segment speeds.
struct MeasurementModel {
  SectionGeometry geometry;
  SpeedRegimes regimes;
  void validate() const {
    geometry.validate();
    regimes.validate();
  }
};

/// Expected speed on one segment for queue length x.
///   v_free            if x <= l      (entirely unqueued)
///   harmonic mixture  if l < x <= r  (partially queued)
///   v_jam             if x > r       (entirely queued)
/// The partial branch is segment length over total traversal time, so the
/// function is continuous and equals v_jam exactly at x = r.
double expected_speed(double x_m, const Segment& segment, const SpeedRegimes& regimes);

/// expected_speed applied to every segment in order.
std::vector<double> expected_speeds(double x_m, const MeasurementModel& model);
void expected_speeds_into(double x_m, const MeasurementModel& model,
                          std::span<double> out);

/// d expected_speed / dx per segment. Zero outside [l, r]; inside, the
/// analytic derivative of the harmonic branch. At x = l and x = r the
/// right-limit of the interior branch is reported (0 for x just above r);
/// the map is continuous but not differentiable at those points.
std::vector<double> jacobian_h(double x_m, const MeasurementModel& model);
double segment_speed_derivative(double x_m, const Segment& segment,
                                const SpeedRegimes& regimes);

struct RegimeEstimationOptions {
  double bin_width_mps = 1.0;
  double min_mode_separation_mps = 3.0;
  std::size_t min_samples = 100;
  std::filesystem::path histogram_csv;  // optional diagnostic dump
};

/// Picks the two dominant modes of the observed speed distribution via a
/// histogram: the two tallest local maxima at least min_mode_separation
/// apart. The lower mode is v_jam, the higher one v_free. Throws
/// NumericError with the histogram embedded when no such pair exists.
SpeedRegimes estimate_regimes(std::span<const double> speeds_mps,
                              const RegimeEstimationOptions& options = {});

}  // namespace qnet
