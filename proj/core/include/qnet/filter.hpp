#pragma once

#include <optional>
#include <span>
#include <vector>

#include "qnet/control_input.hpp"
#include "qnet/gainnet.hpp"
#include "qnet/measurement_model.hpp"

namespace qnet {

enum class FilterVariant { qnet, qnet_no_u, qekf };

FilterVariant parse_variant(std::string_view name);
std::string_view variant_name(FilterVariant v);

struct EkfParams {
  double process_var = 4.0;      // Q_t, meters^2 per step
  double measurement_var = 1.0;  // R_t diagonal, (m/s)^2
  double initial_var = 100.0;    // Sigma_0, meters^2
  void validate() const;
};

struct PredictResult {
  double x_prior = 0.0;
  std::vector<double> y_pred;
};

/// x_prior = clamp(x_post_prev + u, 0, q_max); y_pred = h(x_prior).
PredictResult predict(double x_post_prev_m, double u_m, const MeasurementModel& model);

struct LearnedUpdateResult {
  double x_post = 0.0;      // clamped unless clamping was disabled
  double x_post_raw = 0.0;  // before clamping
  std::vector<std::vector<double>> gains;      // per group
  std::vector<GainNetState> states;            // per group, post-step
  std::vector<MeasurementGroup> groups;
};

/// Grouped learned update: builds the interior groups, runs the gain network
/// per group (shared parameters, per-group state), sums the contributions and
/// clamps. Training passes clamp = false.
LearnedUpdateResult update_learned(double x_prior_m, std::span<const double> y_t,
                                   std::span<const double> y_prev,
                                   std::span<const double> y_pred, double d_evol_m,
                                   double d_update_m,
                                   const std::vector<GainNetState>& states,
                                   const ParameterStore& store, const GainNet& net,
                                   const FeatureScaling& scaling, double q_max_m,
                                   bool clamp = true);

struct EkfUpdateResult {
  double x_post = 0.0;
  double sigma_post = 0.0;
  std::vector<double> gain;  // length N
};

/// Scalar-state EKF update with diagonal measurement covariance:
///   S = H Sigma H^T + R,  K = Sigma H^T S^-1,
///   x_post = clamp(x_prior + K (y - y_pred)),  Sigma_post = Sigma - K S K^T.
EkfUpdateResult update_ekf(double x_prior_m, double sigma_prior, std::span<const double> y,
                           std::span<const double> y_pred, std::span<const double> jacobian,
                           const EkfParams& params, double q_max_m);

/// Sequential per-day stepper shared by batch and streaming paths; state
/// carries across steps, one instance per day.
class FilterSession {
 public:
  FilterSession(const MeasurementModel& model, FilterVariant variant,
                const ParameterStore* store, const GainNet* net, const EkfParams& ekf);

  struct StepOutput {
    double prior = 0.0;
    double posterior = 0.0;
    std::vector<double> y_pred;
    std::vector<std::vector<double>> gains;
  };

  /// One 10 s step: per-segment speeds (already imputed/expanded) and the
  /// control input. qnet_no_u ignores u.
  StepOutput step(std::span<const double> y_t, double u_m);

  double posterior() const { return x_post_prev_; }

 private:
  const MeasurementModel* model_;
  FilterVariant variant_;
  const ParameterStore* store_;
  const GainNet* net_;
  EkfParams ekf_;
  FeatureScaling scaling_;

  bool first_ = true;
  double x_post_prev_ = 0.0;
  double x_post_prev2_ = 0.0;
  double x_prior_prev_ = 0.0;
  double sigma_ = 0.0;
  std::vector<double> y_prev_;
  std::vector<GainNetState> states_;
};

struct RunDayOptions {
  FilterVariant variant = FilterVariant::qnet;
  const ParameterStore* store = nullptr;  // qnet variants
  const GainNet* net = nullptr;           // qnet variants
  EkfParams ekf;                          // qekf
  /// Precomputed control input; when absent, run_day derives it offline.
  const std::vector<double>* control_u = nullptr;
  BandPass bandpass;
  std::size_t lambda_window_steps = 180;
};

/// Full-day inference (Algorithm: x_0 = 0, predict/update per 10 s step,
/// measurements repeated within each 60 s interval). On a numeric error the
/// partial trace is attached to the rethrown message's length; steps
/// completed so far remain in the returned trace for diagnostics.
FilterTrace run_day(const SensorDay& day, const MeasurementModel& model,
                    const RunDayOptions& options);

/// Strictly causal estimator: counts feed an online control deriver, aFCD
/// rows arrive per interval (forward-filled from v_free before the first
/// report), and each push emits one posterior. Batch online mode and the
/// realtime stream both drive this class, so they match bit-exactly.
class OnlineEstimator {
 public:
  OnlineEstimator(const MeasurementModel& model, FilterVariant variant,
                  const ParameterStore* store, const GainNet* net, const EkfParams& ekf,
                  const BandPass& bandpass, std::size_t lambda_window_steps);

  /// Latest 60 s report for one segment; missing values keep the previous.
  void push_afcd(std::size_t segment, std::optional<double> speed_mps);

  /// One 10 s step of cumulative counts; returns (prior, posterior).
  FilterSession::StepOutput push_counts(double cum_inflow, double cum_outflow);

 private:
  MeasurementModel model_;
  FilterVariant variant_;
  OnlineControlDeriver control_;
  FilterSession session_;
  std::vector<double> current_speeds_;
};

/// Batch driver for the online path: replays the day through an
/// OnlineEstimator in arrival order.
FilterTrace run_day_online(const SensorDay& day, const MeasurementModel& model,
                           const RunDayOptions& options);

}  // namespace qnet
