#pragma once

#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

/// Frequency band for the Fourier filter, in Hz on the 10 s sample grid
/// (Nyquist 0.05 Hz). Defaults suppress drift slower than 4 h and noise
/// faster than 4 min.
struct BandPass {
  double low_hz = 1.0 / (4.0 * 3600.0);
  double high_hz = 1.0 / 240.0;
  void validate() const;
};

struct ReconstructionParams {
  double lambda_c = 0.0;  // unobserved net rate, vehicles/s
  double k_jam = 0.0;     // vehicles/m/lane, raw conservation form only
  double k_free = 0.0;    // vehicles/m/lane, raw conservation form only
  BandPass bandpass;
};

enum class ControlMode { offline, online };

/// Control input u_t plus the reconstructed queue signal it was derived from.
struct ControlSeries {
  std::vector<double> u;                // meters per 10 s step
  std::vector<double> reconstructed_q;  // diagnostic, meters
};

/// Raw conservation inversion, no clamping:
///   q_t = (A_t - D_t - m L k_free - lambda_c t) / (m (k_jam - k_free))
std::vector<double> reconstruct_queue_raw(const SensorDay& counts,
                                          const ReconstructionParams& params,
                                          const SectionGeometry& geometry);

/// Least-squares slope of (A_t - D_t) against elapsed seconds, fitted over
/// the first and last boundary windows of the day (queue approximately zero
/// there).
double estimate_lambda_offline(const SensorDay& counts,
                               std::size_t boundary_window_steps = 180);

/// Causal per-step refit: at step t, slope over all samples [0, t]. Zero
/// until boundary_window_steps samples have been seen.
std::vector<double> estimate_lambda_online(const SensorDay& counts,
                                           std::size_t boundary_window_steps = 180);

/// Shifts and scales so min -> 0 and max -> q_max. Constant input is a
/// numeric error.
std::vector<double> affine_rescale(const std::vector<double>& signal, double q_max_m);

/// DFT band-pass: zero every bin with |f| < low_hz or |f| > high_hz
/// (DC included whenever low_hz > 0), inverse transform, real part.
/// Requires length >= 16.
std::vector<double> bandpass_filter(const std::vector<double>& signal, double low_hz,
                                    double high_hz,
                                    double sample_interval_s = kBaseStepSeconds);

/// Full control-input chain: unobserved-flow correction and affine rescale,
/// Fourier band-pass, first temporal difference (u_0 = 0).
///
/// offline: lambda from the two boundary windows, extrema and the Fourier
/// filter over the whole day. online: strictly causal - lambda is refit per
/// step, the rescale uses running extrema, and the spectral stage is
/// dropped (a whole-signal DFT cannot be evaluated at its newest sample
/// without reading ahead; the per-step lambda correction plus differencing
/// already remove the drift the offline filter targets).
ControlSeries derive_control(const SensorDay& counts, const SectionGeometry& geometry,
                             ControlMode mode, const BandPass& bandpass = {},
                             std::size_t boundary_window_steps = 180);

/// Incremental engine behind the online mode; realtime streaming feeds it
/// one step at a time and batch online mode drives it over a whole day, so
/// both produce bit-identical series.
class OnlineControlDeriver {
 public:
  OnlineControlDeriver(double q_max_m, const BandPass& bandpass,
                       std::size_t boundary_window_steps);

  /// Feed the cumulative counts for the next 10 s step; returns u_t.
  double push(double cum_inflow, double cum_outflow);

  double lambda() const { return lambda_; }
  double last_reconstructed() const { return last_reconstructed_; }

 private:
  double q_max_;
  std::size_t min_steps_;
  std::vector<double> net_;  // A_t - D_t prefix
  // running least-squares sums for the lambda refit
  double sum_t_ = 0, sum_t2_ = 0, sum_y_ = 0, sum_ty_ = 0;
  double lambda_ = 0.0;
  double last_reconstructed_ = 0.0;
};

}  // namespace qnet
