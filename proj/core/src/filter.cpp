#include "qnet/filter.hpp"

#include <cmath>

namespace qnet {

FilterVariant parse_variant(std::string_view name) {
  if (name == "qnet") return FilterVariant::qnet;
  if (name == "qnet_no_u") return FilterVariant::qnet_no_u;
  if (name == "qekf") return FilterVariant::qekf;
  throw DataError("unknown filter variant '" + std::string(name) +
                  "' (expected qnet, qnet_no_u or qekf)");
}

std::string_view variant_name(FilterVariant v) {
  switch (v) {
    case FilterVariant::qnet: return "qnet";
    case FilterVariant::qnet_no_u: return "qnet_no_u";
    case FilterVariant::qekf: return "qekf";
  }
  return "?";
}

void EkfParams::validate() const {
  if (!(process_var > 0.0) || !(measurement_var > 0.0) || !(initial_var > 0.0)) {
    throw DataError("EKF variances must all be > 0");
  }
}

PredictResult predict(double x_post_prev_m, double u_m, const MeasurementModel& model) {
  PredictResult out;
  out.x_prior = clamp_queue(x_post_prev_m + u_m, model.geometry.q_max_m);
  out.y_pred = expected_speeds(out.x_prior, model);
  return out;
}

LearnedUpdateResult update_learned(double x_prior_m, std::span<const double> y_t,
                                   std::span<const double> y_prev,
                                   std::span<const double> y_pred, double d_evol_m,
                                   double d_update_m,
                                   const std::vector<GainNetState>& states,
                                   const ParameterStore& store, const GainNet& net,
                                   const FeatureScaling& scaling, double q_max_m,
                                   bool clamp) {
  LearnedUpdateResult out;
  out.groups = build_groups(y_t, y_prev, y_pred);
  if (states.size() != out.groups.size()) {
    throw DataError("update_learned: state count differs from group count");
  }
  out.gains.reserve(out.groups.size());
  out.states.reserve(out.groups.size());
  for (std::size_t g = 0; g < out.groups.size(); ++g) {
    GainFeatures features;
    features.d_meas = out.groups[g].d_meas;
    features.d_innov = out.groups[g].d_innov;
    features.d_evol = d_evol_m;
    features.d_update = d_update_m;
    auto result = compute_gain(store, net, features, states[g], scaling);
    out.gains.push_back(std::move(result.gain));
    out.states.push_back(std::move(result.state));
  }
  out.x_post_raw = grouped_update(x_prior_m, out.groups, out.gains);
  out.x_post = clamp ? clamp_queue(out.x_post_raw, q_max_m) : out.x_post_raw;
  return out;
}

EkfUpdateResult update_ekf(double x_prior_m, double sigma_prior, std::span<const double> y,
                           std::span<const double> y_pred, std::span<const double> jacobian,
                           const EkfParams& params, double q_max_m) {
  params.validate();
  if (y.size() != y_pred.size() || y.size() != jacobian.size()) {
    throw DataError("update_ekf: measurement vector lengths differ");
  }
  if (!(sigma_prior > 0.0)) throw NumericError("update_ekf: non-positive prior variance");
  const double r = params.measurement_var;
  // Diagonal R and a scalar state let S^-1 reduce to a rank-one identity:
  //   K = sigma H^T R^-1 / (1 + sigma H^T R^-1 H)
  //   K S K^T = sigma * a / (1 + a),  a = sigma H^T R^-1 H
  double a = 0.0;
  for (double h : jacobian) a += h * h;
  a *= sigma_prior / r;
  if (!std::isfinite(a)) throw NumericError("update_ekf: innovation covariance is singular");
  const double denom = 1.0 + a;

  EkfUpdateResult out;
  out.gain.resize(y.size());
  double correction = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    out.gain[i] = sigma_prior * jacobian[i] / (r * denom);
    correction += out.gain[i] * (y[i] - y_pred[i]);
  }
  out.x_post = clamp_queue(x_prior_m + correction, q_max_m);
  out.sigma_post = sigma_prior - sigma_prior * a / denom;
  return out;
}

FilterSession::FilterSession(const MeasurementModel& model, FilterVariant variant,
                             const ParameterStore* store, const GainNet* net,
                             const EkfParams& ekf)
    : model_(&model), variant_(variant), store_(store), net_(net), ekf_(ekf) {
  model.validate();
  scaling_ = {model.geometry.q_max_m, model.regimes.v_free_mps};
  if (variant_ == FilterVariant::qekf) {
    ekf_.validate();
    sigma_ = ekf_.initial_var;
  } else {
    if (store_ == nullptr || net_ == nullptr) {
      throw DataError("learned filter variants need gain network parameters");
    }
    const std::size_t n = model.geometry.segment_count();
    if (n < 3) {
      throw DataError("grouped update needs at least 3 segments, section has " +
                      std::to_string(n));
    }
    states_.assign(n - 2, net_->zero_state());
  }
}

FilterSession::StepOutput FilterSession::step(std::span<const double> y_t, double u_m) {
  if (y_t.size() != model_->geometry.segment_count()) {
    throw DataError("filter step: measurement size differs from segment count");
  }
  if (variant_ == FilterVariant::qnet_no_u) u_m = 0.0;

  StepOutput out;
  if (variant_ == FilterVariant::qekf) sigma_ += ekf_.process_var;

  const auto pred = predict(x_post_prev_, u_m, *model_);
  out.prior = pred.x_prior;
  out.y_pred = pred.y_pred;

  if (first_) y_prev_.assign(y_t.begin(), y_t.end());  // first-step measurement diff is zero

  if (variant_ == FilterVariant::qekf) {
    const auto jac = jacobian_h(pred.x_prior, *model_);
    auto upd = update_ekf(pred.x_prior, sigma_, y_t, pred.y_pred, jac, ekf_,
                          model_->geometry.q_max_m);
    out.posterior = upd.x_post;
    out.gains.push_back(std::move(upd.gain));
    sigma_ = upd.sigma_post;
  } else {
    const double d_evol = first_ ? 0.0 : x_post_prev_ - x_post_prev2_;
    const double d_update = first_ ? 0.0 : x_post_prev_ - x_prior_prev_;
    auto upd = update_learned(pred.x_prior, y_t, y_prev_, pred.y_pred, d_evol, d_update,
                              states_, *store_, *net_, scaling_,
                              model_->geometry.q_max_m, /*clamp=*/true);
    out.posterior = upd.x_post;
    out.gains = std::move(upd.gains);
    states_ = std::move(upd.states);
  }

  x_post_prev2_ = x_post_prev_;
  x_post_prev_ = out.posterior;
  x_prior_prev_ = out.prior;
  y_prev_.assign(y_t.begin(), y_t.end());
  first_ = false;
  return out;
}

FilterTrace run_day(const SensorDay& day, const MeasurementModel& model,
                    const RunDayOptions& options) {
  day.validate();
  const std::size_t steps = day.steps();
  const auto imputed = impute_missing(day.afcd_speeds);
  const auto speeds = expand_afcd(imputed, steps);
  if (speeds.size() != model.geometry.segment_count()) {
    throw DataError("run_day: aFCD segment count differs from section geometry");
  }

  std::vector<double> u;
  if (options.variant == FilterVariant::qnet_no_u) {
    u.assign(steps, 0.0);
  } else if (options.control_u != nullptr) {
    u = *options.control_u;
    if (u.size() != steps) throw DataError("run_day: control series length mismatch");
  } else {
    u = derive_control(day, model.geometry, ControlMode::offline, options.bandpass,
                       options.lambda_window_steps)
            .u;
  }

  FilterSession session(model, options.variant, options.store, options.net, options.ekf);
  FilterTrace trace;
  trace.prior_m.reserve(steps);
  trace.posterior_m.reserve(steps);
  trace.predicted_speeds.reserve(steps);
  trace.gains.reserve(steps);
  std::vector<double> y_t(model.geometry.segment_count());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t s = 0; s < y_t.size(); ++s) y_t[s] = speeds[s][t];
    FilterSession::StepOutput out;
    try {
      out = session.step(y_t, u[t]);
    } catch (const NumericError& e) {
      // keep the partial trace for diagnostics
      throw NumericError(std::string(e.what()) + " (at step " + std::to_string(t) + ")");
    }
    trace.prior_m.push_back(out.prior);
    trace.posterior_m.push_back(out.posterior);
    trace.predicted_speeds.push_back(std::move(out.y_pred));
    trace.gains.push_back(std::move(out.gains));
  }
  return trace;
}

OnlineEstimator::OnlineEstimator(const MeasurementModel& model, FilterVariant variant,
                                 const ParameterStore* store, const GainNet* net,
                                 const EkfParams& ekf, const BandPass& bandpass,
                                 std::size_t lambda_window_steps)
    : model_(model),
      variant_(variant),
      control_(model.geometry.q_max_m, bandpass, lambda_window_steps),
      session_(model_, variant, store, net, ekf),
      current_speeds_(model.geometry.segment_count(), model.regimes.v_free_mps) {}

void OnlineEstimator::push_afcd(std::size_t segment, std::optional<double> speed_mps) {
  if (segment >= current_speeds_.size()) {
    throw DataError("push_afcd: segment index out of range");
  }
  if (speed_mps.has_value()) current_speeds_[segment] = *speed_mps;
}

FilterSession::StepOutput OnlineEstimator::push_counts(double cum_inflow,
                                                       double cum_outflow) {
  const double u = (variant_ == FilterVariant::qnet_no_u)
                       ? 0.0
                       : control_.push(cum_inflow, cum_outflow);
  return session_.step(current_speeds_, u);
}

FilterTrace run_day_online(const SensorDay& day, const MeasurementModel& model,
                           const RunDayOptions& options) {
  day.validate();
  if (day.afcd_speeds.size() != model.geometry.segment_count()) {
    throw DataError("run_day_online: aFCD segment count differs from section geometry");
  }
  OnlineEstimator estimator(model, options.variant, options.store, options.net,
                            options.ekf, options.bandpass, options.lambda_window_steps);
  FilterTrace trace;
  const std::size_t steps = day.steps();
  for (std::size_t t = 0; t < steps; ++t) {
    if (t % kStepsPerAfcdInterval == 0) {
      const std::size_t interval = t / kStepsPerAfcdInterval;
      for (std::size_t s = 0; s < day.afcd_speeds.size(); ++s) {
        estimator.push_afcd(s, day.afcd_speeds[s][interval]);
      }
    }
    auto out = estimator.push_counts(day.cum_inflow[t], day.cum_outflow[t]);
    trace.prior_m.push_back(out.prior);
    trace.posterior_m.push_back(out.posterior);
    trace.predicted_speeds.push_back(std::move(out.y_pred));
    trace.gains.push_back(std::move(out.gains));
  }
  return trace;
}

}  // namespace qnet
