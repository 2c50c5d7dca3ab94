#pragma once

#include <cstdint>
#include <vector>

#include "qnet/filter.hpp"

namespace qnet {

struct TrainConfig {
  std::size_t window_steps = 60;  // 10 minutes on the 10 s grid
  double lr = 0.001;
  int epochs = 50;
  int patience = 10;  // early stopping on validation RMSE
  std::uint64_t seed = 7;
  bool clamp_in_training = false;  // clipping disabled while gradients flow
  double grad_clip_norm = 10.0;
  BandPass bandpass;
  std::size_t lambda_window_steps = 180;
  void validate() const;
};

struct DataSplit {
  std::vector<SensorDay> train;
  std::vector<SensorDay> validation;
  std::vector<SensorDay> test;
};

/// Half-open window ranges covering [0, steps); the last one may be short.
std::vector<std::pair<std::size_t, std::size_t>> slice_windows(std::size_t steps,
                                                               std::size_t window_steps);

/// RMSE between a window of estimates and ground truth.
double window_loss(std::span<const double> estimates_m, std::span<const double> truth_m);

/// Per-day inputs with control input derived once up front.
struct PreparedDay {
  std::vector<std::vector<double>> speeds_mps;  // [segment][step], imputed + expanded
  std::vector<double> u_m;
  std::vector<double> truth_m;
};
PreparedDay prepare_day(const SensorDay& day, const MeasurementModel& model,
                        const TrainConfig& config);

/// Values carried across window boundaries: states flow, gradients stop.
struct WindowCarry {
  double x_post_prev = 0.0;
  double x_post_prev2 = 0.0;
  double x_prior_prev = 0.0;
  bool first_step_of_day = true;
  std::vector<double> y_prev;
  std::vector<GainNetState> states;
};
WindowCarry day_start_carry(const MeasurementModel& model, const GainNet& net);

/// Forward pass of one window on a tape (clamping off unless configured),
/// loss seeding and backward. Parameter gradients are left on the tape;
/// carry is advanced with detached values.
double run_window_traced(Tape& tape, const MeasurementModel& model, const GainNet& net,
                         const PreparedDay& day, std::size_t begin, std::size_t end,
                         WindowCarry& carry, bool clamp, double* sse_out = nullptr);

struct EpochStats {
  int epoch = 0;
  double train_rmse = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  GainNetConfig config;
  ParameterStore store;  // best-validation parameters
  std::vector<EpochStats> curve;
  int best_epoch = 0;
  double best_val_rmse = 0.0;
  bool aborted_on_divergence = false;
};

/// Windowed end-to-end training: per window one Adam step with truncated
/// BPTT, per epoch a clamped validation pass; keeps the best-validation
/// parameters and stops early when validation stalls.
TrainResult train(const std::vector<SensorDay>& train_days,
                  const std::vector<SensorDay>& validation_days,
                  const MeasurementModel& model, const GainNetConfig& net_config,
                  const TrainConfig& config);

}  // namespace qnet
