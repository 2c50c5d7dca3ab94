#include "qnet/control_input.hpp"

#include <algorithm>
#include <cmath>

#include "qnet/fft.hpp"

namespace qnet {

namespace {

constexpr std::size_t kMinFilterLength = 16;

double slope_from_sums(double n, double sum_t, double sum_t2, double sum_y,
                       double sum_ty) {
  const double denom = n * sum_t2 - sum_t * sum_t;
  if (denom <= 0.0) {
    throw NumericError("lambda fit is degenerate: no time spread in regression support");
  }
  return (n * sum_ty - sum_t * sum_y) / denom;
}

}  // namespace

void BandPass::validate() const {
  const double nyquist = 0.5 / kBaseStepSeconds;
  if (!(low_hz >= 0.0) || !(low_hz < high_hz) || high_hz > nyquist) {
    throw DataError("band-pass cutoffs must satisfy 0 <= low < high <= " +
                    std::to_string(nyquist) + " Hz");
  }
}

std::vector<double> reconstruct_queue_raw(const SensorDay& counts,
                                          const ReconstructionParams& params,
                                          const SectionGeometry& geometry) {
  if (!(params.k_jam > params.k_free && params.k_free > 0.0)) {
    throw DataError("reconstruct_queue_raw requires k_jam > k_free > 0");
  }
  const double m = geometry.lanes;
  const double denom = m * (params.k_jam - params.k_free);
  const double floor_term = m * geometry.length_m * params.k_free;
  std::vector<double> q(counts.steps());
  for (std::size_t i = 0; i < counts.steps(); ++i) {
    const double t_seconds = static_cast<double>(i) * counts.step_s;
    q[i] = (counts.cum_inflow[i] - counts.cum_outflow[i] - floor_term -
            params.lambda_c * t_seconds) /
           denom;
  }
  return q;
}

double estimate_lambda_offline(const SensorDay& counts,
                               std::size_t boundary_window_steps) {
  const std::size_t n = counts.steps();
  if (boundary_window_steps == 0 || n < 2 * boundary_window_steps) {
    throw DataError("estimate_lambda_offline: day too short for two boundary windows of " +
                    std::to_string(boundary_window_steps) + " steps");
  }
  double sum_t = 0, sum_t2 = 0, sum_y = 0, sum_ty = 0;
  std::size_t count = 0;
  auto accumulate = [&](std::size_t i) {
    const double t = static_cast<double>(i) * counts.step_s;
    const double y = counts.cum_inflow[i] - counts.cum_outflow[i];
    sum_t += t;
    sum_t2 += t * t;
    sum_y += y;
    sum_ty += t * y;
    ++count;
  };
  for (std::size_t i = 0; i < boundary_window_steps; ++i) accumulate(i);
  for (std::size_t i = n - boundary_window_steps; i < n; ++i) accumulate(i);
  return slope_from_sums(static_cast<double>(count), sum_t, sum_t2, sum_y, sum_ty);
}

std::vector<double> estimate_lambda_online(const SensorDay& counts,
                                           std::size_t boundary_window_steps) {
  std::vector<double> out(counts.steps(), 0.0);
  double sum_t = 0, sum_t2 = 0, sum_y = 0, sum_ty = 0;
  for (std::size_t i = 0; i < counts.steps(); ++i) {
    const double t = static_cast<double>(i) * counts.step_s;
    const double y = counts.cum_inflow[i] - counts.cum_outflow[i];
    sum_t += t;
    sum_t2 += t * t;
    sum_y += y;
    sum_ty += t * y;
    if (i + 1 >= boundary_window_steps) {
      out[i] = slope_from_sums(static_cast<double>(i + 1), sum_t, sum_t2, sum_y, sum_ty);
    }
  }
  return out;
}

std::vector<double> affine_rescale(const std::vector<double>& signal, double q_max_m) {
  if (signal.empty()) throw DataError("affine_rescale: empty signal");
  const auto [lo_it, hi_it] = std::minmax_element(signal.begin(), signal.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    throw NumericError("affine_rescale: constant signal cannot be scaled");
  }
  const double scale = q_max_m / (hi - lo);
  std::vector<double> out(signal.size());
  for (std::size_t i = 0; i < signal.size(); ++i) out[i] = (signal[i] - lo) * scale;
  return out;
}

std::vector<double> bandpass_filter(const std::vector<double>& signal, double low_hz,
                                    double high_hz, double sample_interval_s) {
  BandPass band{low_hz, high_hz};
  band.validate();
  const std::size_t n = signal.size();
  if (n < kMinFilterLength) {
    throw DataError("bandpass_filter: signal length must be >= " +
                    std::to_string(kMinFilterLength));
  }
  auto spectrum = fft_forward(signal);
  for (std::size_t k = 0; k < n; ++k) {
    const double cycles = (k <= n / 2) ? static_cast<double>(k)
                                       : static_cast<double>(k) - static_cast<double>(n);
    const double freq = std::abs(cycles) / (static_cast<double>(n) * sample_interval_s);
    if (freq < low_hz || freq > high_hz) spectrum[k] = {0.0, 0.0};
  }
  return fft_inverse_real(std::move(spectrum));
}

ControlSeries derive_control(const SensorDay& counts, const SectionGeometry& geometry,
                             ControlMode mode, const BandPass& bandpass,
                             std::size_t boundary_window_steps) {
  bandpass.validate();
  const std::size_t n = counts.steps();
  ControlSeries series;
  series.u.assign(n, 0.0);
  series.reconstructed_q.assign(n, 0.0);
  if (n == 0) return series;

  if (mode == ControlMode::offline) {
    const double lambda = estimate_lambda_offline(counts, boundary_window_steps);
    std::vector<double> corrected(n);
    for (std::size_t i = 0; i < n; ++i) {
      corrected[i] = counts.cum_inflow[i] - counts.cum_outflow[i] -
                     lambda * static_cast<double>(i) * counts.step_s;
    }
    const auto [lo, hi] = std::minmax_element(corrected.begin(), corrected.end());
    if (!(*hi > *lo)) return series;  // no queue signal at all, u stays zero
    const auto rescaled = affine_rescale(corrected, geometry.q_max_m);
    const auto filtered =
        bandpass_filter(rescaled, bandpass.low_hz, bandpass.high_hz, counts.step_s);
    series.reconstructed_q = filtered;
    for (std::size_t i = 1; i < n; ++i) series.u[i] = filtered[i] - filtered[i - 1];
    return series;
  }

  OnlineControlDeriver deriver(geometry.q_max_m, bandpass, boundary_window_steps);
  for (std::size_t i = 0; i < n; ++i) {
    series.u[i] = deriver.push(counts.cum_inflow[i], counts.cum_outflow[i]);
    series.reconstructed_q[i] = deriver.last_reconstructed();
  }
  return series;
}

OnlineControlDeriver::OnlineControlDeriver(double q_max_m, const BandPass& bandpass,
                                           std::size_t boundary_window_steps)
    : q_max_(q_max_m), min_steps_(std::max<std::size_t>(2, boundary_window_steps)) {
  bandpass.validate();
}

double OnlineControlDeriver::push(double cum_inflow, double cum_outflow) {
  const double net = cum_inflow - cum_outflow;
  const double t = static_cast<double>(net_.size()) * kBaseStepSeconds;
  net_.push_back(net);
  sum_t_ += t;
  sum_t2_ += t * t;
  sum_y_ += net;
  sum_ty_ += t * net;

  const std::size_t n = net_.size();
  if (n < min_steps_) return 0.0;
  lambda_ = slope_from_sums(static_cast<double>(n), sum_t_, sum_t2_, sum_y_, sum_ty_);

  // Extrema of the whole prefix corrected with the current lambda; the
  // retroactive correction keeps the scaling range free of the lambda
  // warm-up transient while still only touching past samples.
  double lo = net_[0];
  double hi = net_[0];
  for (std::size_t i = 1; i < n; ++i) {
    const double corrected = net_[i] - lambda_ * static_cast<double>(i) * kBaseStepSeconds;
    lo = std::min(lo, corrected);
    hi = std::max(hi, corrected);
  }
  if (!(hi > lo)) return 0.0;
  const double scale = q_max_ / (hi - lo);
  const double corrected_now = net - lambda_ * t;
  last_reconstructed_ = (corrected_now - lo) * scale;
  const double delta_net = net - net_[n - 2];
  return scale * (delta_net - lambda_ * kBaseStepSeconds);
}

}  // namespace qnet
