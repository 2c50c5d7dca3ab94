#include "qnet/training.hpp"

#include <cmath>
#include <limits>

namespace qnet {

void TrainConfig::validate() const {
  if (window_steps == 0) throw DataError("train config: window_steps must be > 0");
  if (!(lr > 0.0)) throw DataError("train config: lr must be > 0");
  if (epochs <= 0) throw DataError("train config: epochs must be > 0");
  if (!(grad_clip_norm > 0.0)) throw DataError("train config: grad_clip_norm must be > 0");
  bandpass.validate();
}

std::vector<std::pair<std::size_t, std::size_t>> slice_windows(std::size_t steps,
                                                               std::size_t window_steps) {
  if (steps == 0 || window_steps == 0 || steps < 1) {
    throw DataError("slice_windows: need at least one step and a positive window");
  }
  std::vector<std::pair<std::size_t, std::size_t>> windows;
  for (std::size_t begin = 0; begin < steps; begin += window_steps) {
    windows.emplace_back(begin, std::min(steps, begin + window_steps));
  }
  return windows;
}

double window_loss(std::span<const double> estimates_m, std::span<const double> truth_m) {
  if (estimates_m.empty()) throw DataError("window_loss: empty window");
  if (estimates_m.size() != truth_m.size()) {
    throw DataError("window_loss: estimate and truth lengths differ");
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < estimates_m.size(); ++i) {
    const double err = truth_m[i] - estimates_m[i];
    sse += err * err;
  }
  return std::sqrt(sse / static_cast<double>(estimates_m.size()));
}

PreparedDay prepare_day(const SensorDay& day, const MeasurementModel& model,
                        const TrainConfig& config) {
  day.validate();
  PreparedDay prepared;
  prepared.speeds_mps = expand_afcd(impute_missing(day.afcd_speeds), day.steps());
  if (prepared.speeds_mps.size() != model.geometry.segment_count()) {
    throw DataError("prepare_day: aFCD segment count differs from section geometry");
  }
  prepared.u_m = derive_control(day, model.geometry, ControlMode::offline, config.bandpass,
                                config.lambda_window_steps)
                     .u;
  if (!day.ground_truth_m) throw DataError("prepare_day: day has no ground truth");
  prepared.truth_m = *day.ground_truth_m;
  return prepared;
}

WindowCarry day_start_carry(const MeasurementModel& model, const GainNet& net) {
  WindowCarry carry;
  carry.y_prev.assign(model.geometry.segment_count(), 0.0);
  const std::size_t groups = model.geometry.segment_count() - 2;
  carry.states.assign(groups, net.zero_state());
  return carry;
}

double run_window_traced(Tape& tape, const MeasurementModel& model, const GainNet& net,
                         const PreparedDay& day, std::size_t begin, std::size_t end,
                         WindowCarry& carry, bool clamp, double* sse_out) {
  const std::size_t segments = model.geometry.segment_count();
  const std::size_t groups = segments - 2;
  const double q_max = model.geometry.q_max_m;
  const FeatureScaling scaling{q_max, model.regimes.v_free_mps};

  // window-initial values enter as constants: state flows, gradients stop
  NodeId x_post = tape.scalar_input(carry.x_post_prev);
  NodeId x_post2 = tape.scalar_input(carry.x_post_prev2);
  NodeId x_prior_prev = tape.scalar_input(carry.x_prior_prev);
  std::vector<double> y_prev = carry.y_prev;
  std::vector<NodeId> hidden_q(groups), hidden_sigma(groups), hidden_s(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    hidden_q[g] = tape.input(carry.states[g].hidden_q);
    hidden_sigma[g] = tape.input(carry.states[g].hidden_sigma);
    hidden_s[g] = tape.input(carry.states[g].hidden_s);
  }
  bool first = carry.first_step_of_day;

  std::vector<NodeId> posteriors;
  posteriors.reserve(end - begin);
  for (std::size_t t = begin; t < end; ++t) {
    // predict
    NodeId x_prior = tape.affine(x_post, 1.0, day.u_m[t]);
    if (clamp) x_prior = tape.clamp(x_prior, 0.0, q_max);
    const double x_prior_value = tape.value(x_prior)[0];
    const NodeId y_pred =
        tape.mapped_scalar(x_prior, expected_speeds(x_prior_value, model),
                           jacobian_h(x_prior_value, model));

    std::vector<double> y_t(segments);
    for (std::size_t s = 0; s < segments; ++s) y_t[s] = day.speeds_mps[s][t];
    if (first) y_prev = y_t;  // first-step measurement difference is zero
    const NodeId y_node = tape.input(y_t);
    const NodeId innovation = tape.sub(y_node, y_pred);

    // features from the previous step; zero at the first step of the day
    const NodeId d_evol = first ? tape.scalar_input(0.0) : tape.sub(x_post, x_post2);
    const NodeId d_update =
        first ? tape.scalar_input(0.0) : tape.sub(x_post, x_prior_prev);

    NodeId x_new = x_prior;
    for (std::size_t g = 0; g < groups; ++g) {
      const std::size_t i = g + 1;  // interior segment index
      std::vector<double> d_meas = {y_t[i - 1] - y_prev[i - 1], y_t[i] - y_prev[i],
                                    y_t[i + 1] - y_prev[i + 1]};
      const NodeId d_innov = tape.gather(innovation, {i - 1, i, i + 1});
      const auto traced =
          compute_gain(tape, net, d_meas, d_innov, d_evol, d_update, hidden_q[g],
                       hidden_sigma[g], hidden_s[g], scaling);
      x_new = tape.add(x_new, tape.dot(traced.gain, d_innov));
      hidden_q[g] = traced.hidden_q;
      hidden_sigma[g] = traced.hidden_sigma;
      hidden_s[g] = traced.hidden_s;
    }
    if (clamp) x_new = tape.clamp(x_new, 0.0, q_max);

    posteriors.push_back(x_new);
    x_post2 = x_post;
    x_post = x_new;
    x_prior_prev = x_prior;
    y_prev = std::move(y_t);
    first = false;
  }

  // RMSE loss over the window, seeded onto every posterior
  const std::size_t n = posteriors.size();
  double sse = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double err = tape.value(posteriors[k])[0] - day.truth_m[begin + k];
    sse += err * err;
  }
  const double loss = std::sqrt(sse / static_cast<double>(n));
  if (sse_out) *sse_out = sse;

  if (loss > 1e-12 && std::isfinite(loss)) {
    for (std::size_t k = 0; k < n; ++k) {
      const double g = (tape.value(posteriors[k])[0] - day.truth_m[begin + k]) /
                       (static_cast<double>(n) * loss);
      const double seed[1] = {g};
      tape.accumulate_output_grad(posteriors[k], seed);
    }
    tape.run_backward();
  }

  // advance the carry with detached values
  carry.x_post_prev = tape.value(x_post)[0];
  carry.x_post_prev2 = tape.value(x_post2)[0];
  carry.x_prior_prev = tape.value(x_prior_prev)[0];
  carry.y_prev = y_prev;
  carry.first_step_of_day = false;
  for (std::size_t g = 0; g < groups; ++g) {
    carry.states[g].hidden_q = tape.value(hidden_q[g]);
    carry.states[g].hidden_sigma = tape.value(hidden_sigma[g]);
    carry.states[g].hidden_s = tape.value(hidden_s[g]);
  }
  return loss;
}

namespace {

double validation_rmse(const std::vector<PreparedDay>& days,
                       const MeasurementModel& model, const ParameterStore& store,
                       const GainNet& net) {
  double sse = 0.0;
  std::size_t n = 0;
  for (const auto& day : days) {
    FilterSession session(model, FilterVariant::qnet, &store, &net, EkfParams{});
    std::vector<double> y_t(model.geometry.segment_count());
    for (std::size_t t = 0; t < day.truth_m.size(); ++t) {
      for (std::size_t s = 0; s < y_t.size(); ++s) y_t[s] = day.speeds_mps[s][t];
      const auto out = session.step(y_t, day.u_m[t]);
      const double err = out.posterior - day.truth_m[t];
      sse += err * err;
      ++n;
    }
  }
  return std::sqrt(sse / static_cast<double>(n));
}

}  // namespace

TrainResult train(const std::vector<SensorDay>& train_days,
                  const std::vector<SensorDay>& validation_days,
                  const MeasurementModel& model, const GainNetConfig& net_config,
                  const TrainConfig& config) {
  config.validate();
  model.validate();
  if (train_days.empty()) throw DataError("train: no training days");
  if (model.geometry.segment_count() < 3) {
    throw DataError("train: section needs at least 3 segments");
  }

  std::vector<PreparedDay> train_prepared, val_prepared;
  for (const auto& d : train_days) train_prepared.push_back(prepare_day(d, model, config));
  for (const auto& d : validation_days) val_prepared.push_back(prepare_day(d, model, config));

  TrainResult result;
  result.config = net_config;

  ParameterStore store;
  const GainNet net = GainNet::create(store, net_config);
  std::mt19937_64 rng(config.seed);
  net.init(store, rng);

  ParameterStore best = store;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stall = 0;

  Tape tape(store);
  const AdamConfig adam{config.lr, 0.9, 0.999, 1e-8};

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double train_sse = 0.0;
    std::size_t train_steps = 0;
    bool diverged = false;

    for (const auto& day : train_prepared) {
      WindowCarry carry = day_start_carry(model, net);
      for (const auto& [begin, end] : slice_windows(day.truth_m.size(), config.window_steps)) {
        tape.reset();
        double sse = 0.0;
        const double loss =
            run_window_traced(tape, model, net, day, begin, end, carry,
                              config.clamp_in_training, &sse);
        if (!std::isfinite(loss)) {
          diverged = true;
          break;
        }
        train_sse += sse;
        train_steps += end - begin;
        auto& grads = tape.param_grads();
        clip_gradient_norm(grads, config.grad_clip_norm);
        adam_step(store, grads, adam);
      }
      if (diverged) break;
    }

    if (diverged) {
      result.aborted_on_divergence = true;
      break;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_rmse = std::sqrt(train_sse / static_cast<double>(train_steps));
    stats.val_rmse = val_prepared.empty()
                         ? stats.train_rmse
                         : validation_rmse(val_prepared, model, store, net);
    result.curve.push_back(stats);

    if (stats.val_rmse < best_val) {
      best_val = stats.val_rmse;
      best = store;
      best_epoch = epoch;
      stall = 0;
    } else if (++stall >= config.patience) {
      break;
    }
  }

  result.store = std::move(best);
  result.best_epoch = best_epoch;
  result.best_val_rmse = best_val;
  return result;
}

}  // namespace qnet
