#include "qnet/gainnet.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace qnet {

void GainNetConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw DataError(std::string("gain net config: ") + name + " must be > 0");
  };
  positive(gru_hidden_q, "gru_hidden_q");
  positive(gru_hidden_sigma, "gru_hidden_sigma");
  positive(gru_hidden_s, "gru_hidden_s");
  positive(update_width, "update_width");
  positive(evolution_width, "evolution_width");
  positive(measurement_width, "measurement_width");
  positive(refine_width, "refine_width");
  if (gain_hidden_width < 0) throw DataError("gain net config: gain_hidden_width < 0");
}

namespace {

std::size_t dense_params(int in, int out) {
  return static_cast<std::size_t>(out) * in + static_cast<std::size_t>(out);
}

std::size_t gru_params(int in, int hidden) {
  return 3 * (static_cast<std::size_t>(hidden) * in +
              static_cast<std::size_t>(hidden) * hidden + static_cast<std::size_t>(hidden));
}

}  // namespace

std::size_t parameter_count(const GainNetConfig& c) {
  c.validate();
  std::size_t n = 0;
  n += dense_params(1, c.update_width);                         // a: FC
  n += gru_params(c.update_width, c.gru_hidden_q);              // a: GRU
  n += dense_params(1, c.evolution_width);                      // b: FC
  n += gru_params(c.gru_hidden_q + c.evolution_width, c.gru_hidden_sigma);  // b: GRU
  n += dense_params(c.gru_hidden_sigma, c.measurement_width);   // c: FC on sigma
  n += dense_params(2 * kGroupSize, c.measurement_width);       // c: FC on speeds
  n += gru_params(2 * c.measurement_width, c.gru_hidden_s);     // c: GRU
  const int gain_in = c.gru_hidden_sigma + c.gru_hidden_s;
  if (c.gain_hidden_width > 0) {
    n += dense_params(gain_in, c.gain_hidden_width);            // d: hidden
    n += dense_params(c.gain_hidden_width, kGroupSize);         // d: gain
  } else {
    n += dense_params(gain_in, kGroupSize);                     // d: gain
  }
  n += dense_params(kGroupSize + c.gru_hidden_s, c.refine_width);          // e: inner
  n += dense_params(c.gru_hidden_sigma + c.refine_width, c.gru_hidden_sigma);  // e: out
  return n;
}

GainNet GainNet::create(ParameterStore& store, const GainNetConfig& config) {
  config.validate();
  GainNet net;
  net.config = config;
  const auto act = Activation::identity;
  net.fc_update = DenseLayer::create(store, "a.fc", 1, config.update_width, act);
  net.gru_q = GruCell::create(store, "a.gru", config.update_width, config.gru_hidden_q);
  net.fc_evolution = DenseLayer::create(store, "b.fc", 1, config.evolution_width, act);
  net.gru_sigma = GruCell::create(store, "b.gru", config.gru_hidden_q + config.evolution_width,
                                  config.gru_hidden_sigma);
  net.fc_sigma = DenseLayer::create(store, "c.fc_sigma", config.gru_hidden_sigma,
                                    config.measurement_width, act);
  net.fc_speeds =
      DenseLayer::create(store, "c.fc_speeds", 2 * kGroupSize, config.measurement_width, act);
  net.gru_s =
      GruCell::create(store, "c.gru", 2 * config.measurement_width, config.gru_hidden_s);
  const int gain_in = config.gru_hidden_sigma + config.gru_hidden_s;
  if (config.gain_hidden_width > 0) {
    net.fc_gain_hidden =
        DenseLayer::create(store, "d.fc_hidden", gain_in, config.gain_hidden_width, act);
    net.fc_gain =
        DenseLayer::create(store, "d.fc_gain", config.gain_hidden_width, kGroupSize, act);
  } else {
    net.fc_gain = DenseLayer::create(store, "d.fc_gain", gain_in, kGroupSize, act);
  }
  net.fc_refine_in = DenseLayer::create(store, "e.fc_in", kGroupSize + config.gru_hidden_s,
                                        config.refine_width, act);
  net.fc_refine_out =
      DenseLayer::create(store, "e.fc_out", config.gru_hidden_sigma + config.refine_width,
                         config.gru_hidden_sigma, act);
  return net;
}

void GainNet::init(ParameterStore& store, std::mt19937_64& rng) const {
  fc_update.init(store, rng);
  gru_q.init(store, rng);
  fc_evolution.init(store, rng);
  gru_sigma.init(store, rng);
  fc_sigma.init(store, rng);
  fc_speeds.init(store, rng);
  gru_s.init(store, rng);
  if (config.gain_hidden_width > 0) fc_gain_hidden.init(store, rng);
  fc_gain.init(store, rng);
  fc_refine_in.init(store, rng);
  fc_refine_out.init(store, rng);
}

GainNetState GainNet::zero_state() const {
  GainNetState state;
  state.hidden_q.assign(static_cast<std::size_t>(config.gru_hidden_q), 0.0);
  state.hidden_sigma.assign(static_cast<std::size_t>(config.gru_hidden_sigma), 0.0);
  state.hidden_s.assign(static_cast<std::size_t>(config.gru_hidden_s), 0.0);
  return state;
}

std::vector<MeasurementGroup> build_groups(std::span<const double> y_t,
                                           std::span<const double> y_prev,
                                           std::span<const double> y_pred) {
  const std::size_t n = y_t.size();
  if (y_prev.size() != n || y_pred.size() != n) {
    throw DataError("build_groups: measurement vectors have unequal lengths");
  }
  if (n < 3) {
    throw DataError("build_groups: need at least 3 segments for a grouped update, got " +
                    std::to_string(n));
  }
  std::vector<MeasurementGroup> groups;
  groups.reserve(n - 2);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    MeasurementGroup g;
    g.segment = i;
    g.d_meas = {y_t[i - 1] - y_prev[i - 1], y_t[i] - y_prev[i], y_t[i + 1] - y_prev[i + 1]};
    g.d_innov = {y_t[i - 1] - y_pred[i - 1], y_t[i] - y_pred[i], y_t[i + 1] - y_pred[i + 1]};
    groups.push_back(std::move(g));
  }
  return groups;
}

namespace {

void check_finite(std::span<const double> v, const char* submodule) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("gain pipeline produced a non-finite value in ") +
                         submodule);
    }
  }
}

}  // namespace

GainResult compute_gain(const ParameterStore& store, const GainNet& net,
                        const GainFeatures& features, const GainNetState& state,
                        const FeatureScaling& scaling) {
  if (features.d_meas.size() != kGroupSize || features.d_innov.size() != kGroupSize) {
    throw DataError("compute_gain: group features must have length 3");
  }
  const auto& cfg = net.config;
  GainResult result;
  result.state = net.zero_state();
  // scale by reciprocal so traced and untraced passes share the exact ops
  const double inv_q = 1.0 / scaling.q_max_m;
  const double inv_v = 1.0 / scaling.v_free_mps;

  // a: process-noise GRU over the scaled forward update difference
  std::vector<double> upd = {features.d_update * inv_q};
  std::vector<double> a_lift(static_cast<std::size_t>(cfg.update_width));
  fc_apply(store, net.fc_update, upd, a_lift);
  gru_apply(store, net.gru_q, a_lift, state.hidden_q, result.state.hidden_q);
  check_finite(result.state.hidden_q, "a (process noise)");

  // b: state covariance GRU over [Q_hat, lifted evolution difference]
  std::vector<double> evo = {features.d_evol * inv_q};
  std::vector<double> b_lift(static_cast<std::size_t>(cfg.evolution_width));
  fc_apply(store, net.fc_evolution, evo, b_lift);
  std::vector<double> b_in;
  b_in.reserve(result.state.hidden_q.size() + b_lift.size());
  b_in.insert(b_in.end(), result.state.hidden_q.begin(), result.state.hidden_q.end());
  b_in.insert(b_in.end(), b_lift.begin(), b_lift.end());
  std::vector<double> sigma(static_cast<std::size_t>(cfg.gru_hidden_sigma));
  gru_apply(store, net.gru_sigma, b_in, state.hidden_sigma, sigma);
  check_finite(sigma, "b (state covariance)");

  // c: measurement covariance GRU over lifted sigma and speed features
  std::vector<double> c_sigma(static_cast<std::size_t>(cfg.measurement_width));
  fc_apply(store, net.fc_sigma, sigma, c_sigma);
  std::vector<double> speeds(2 * kGroupSize);
  for (int i = 0; i < kGroupSize; ++i) {
    speeds[static_cast<std::size_t>(i)] =
        features.d_meas[static_cast<std::size_t>(i)] * inv_v;
    speeds[static_cast<std::size_t>(kGroupSize + i)] =
        features.d_innov[static_cast<std::size_t>(i)] * inv_v;
  }
  std::vector<double> c_speeds(static_cast<std::size_t>(cfg.measurement_width));
  fc_apply(store, net.fc_speeds, speeds, c_speeds);
  std::vector<double> c_in;
  c_in.reserve(c_sigma.size() + c_speeds.size());
  c_in.insert(c_in.end(), c_sigma.begin(), c_sigma.end());
  c_in.insert(c_in.end(), c_speeds.begin(), c_speeds.end());
  gru_apply(store, net.gru_s, c_in, state.hidden_s, result.state.hidden_s);
  check_finite(result.state.hidden_s, "c (measurement covariance)");

  // d: gain readout from [sigma, s]
  std::vector<double> d_in;
  d_in.reserve(sigma.size() + result.state.hidden_s.size());
  d_in.insert(d_in.end(), sigma.begin(), sigma.end());
  d_in.insert(d_in.end(), result.state.hidden_s.begin(), result.state.hidden_s.end());
  result.gain.assign(kGroupSize, 0.0);
  if (cfg.gain_hidden_width > 0) {
    std::vector<double> d_hidden(static_cast<std::size_t>(cfg.gain_hidden_width));
    fc_apply(store, net.fc_gain_hidden, d_in, d_hidden);
    fc_apply(store, net.fc_gain, d_hidden, result.gain);
  } else {
    fc_apply(store, net.fc_gain, d_in, result.gain);
  }
  check_finite(result.gain, "d (gain)");

  // e: refine the state-GRU hidden state with [K, S] context
  std::vector<double> e_in;
  e_in.reserve(result.gain.size() + result.state.hidden_s.size());
  e_in.insert(e_in.end(), result.gain.begin(), result.gain.end());
  e_in.insert(e_in.end(), result.state.hidden_s.begin(), result.state.hidden_s.end());
  std::vector<double> e_lift(static_cast<std::size_t>(cfg.refine_width));
  fc_apply(store, net.fc_refine_in, e_in, e_lift);
  std::vector<double> e_full;
  e_full.reserve(sigma.size() + e_lift.size());
  e_full.insert(e_full.end(), sigma.begin(), sigma.end());
  e_full.insert(e_full.end(), e_lift.begin(), e_lift.end());
  result.state.hidden_sigma.assign(static_cast<std::size_t>(cfg.gru_hidden_sigma), 0.0);
  fc_apply(store, net.fc_refine_out, e_full, result.state.hidden_sigma);
  check_finite(result.state.hidden_sigma, "e (hidden state update)");

  return result;
}

TracedGainResult compute_gain(Tape& tape, const GainNet& net,
                              const std::vector<double>& d_meas, NodeId d_innov_mps,
                              NodeId d_evol_m, NodeId d_update_m, NodeId hidden_q,
                              NodeId hidden_sigma, NodeId hidden_s,
                              const FeatureScaling& scaling) {
  if (d_meas.size() != kGroupSize || tape.value(d_innov_mps).size() != kGroupSize) {
    throw DataError("compute_gain: group features must have length 3");
  }
  const auto& cfg = net.config;
  TracedGainResult out;

  // a
  const NodeId upd = tape.affine(d_update_m, 1.0 / scaling.q_max_m, 0.0);
  const NodeId a_lift = tape.fc(net.fc_update, upd);
  out.hidden_q = tape.gru(net.gru_q, a_lift, hidden_q);

  // b
  const NodeId evo = tape.affine(d_evol_m, 1.0 / scaling.q_max_m, 0.0);
  const NodeId b_lift = tape.fc(net.fc_evolution, evo);
  const NodeId b_in = tape.concat(std::array<NodeId, 2>{out.hidden_q, b_lift});
  const NodeId sigma = tape.gru(net.gru_sigma, b_in, hidden_sigma);

  // c
  const NodeId c_sigma = tape.fc(net.fc_sigma, sigma);
  std::vector<double> meas_scaled(kGroupSize);
  for (int i = 0; i < kGroupSize; ++i) {
    meas_scaled[static_cast<std::size_t>(i)] =
        d_meas[static_cast<std::size_t>(i)] / scaling.v_free_mps;
  }
  const NodeId innov_scaled = tape.affine(d_innov_mps, 1.0 / scaling.v_free_mps, 0.0);
  const NodeId speeds =
      tape.concat(std::array<NodeId, 2>{tape.input(std::move(meas_scaled)), innov_scaled});
  const NodeId c_speeds = tape.fc(net.fc_speeds, speeds);
  const NodeId c_in = tape.concat(std::array<NodeId, 2>{c_sigma, c_speeds});
  out.hidden_s = tape.gru(net.gru_s, c_in, hidden_s);

  // d
  const NodeId d_in = tape.concat(std::array<NodeId, 2>{sigma, out.hidden_s});
  if (cfg.gain_hidden_width > 0) {
    out.gain = tape.fc(net.fc_gain, tape.fc(net.fc_gain_hidden, d_in));
  } else {
    out.gain = tape.fc(net.fc_gain, d_in);
  }

  // e
  const NodeId e_in = tape.concat(std::array<NodeId, 2>{out.gain, out.hidden_s});
  const NodeId e_lift = tape.fc(net.fc_refine_in, e_in);
  const NodeId e_full = tape.concat(std::array<NodeId, 2>{sigma, e_lift});
  out.hidden_sigma = tape.fc(net.fc_refine_out, e_full);

  return out;
}

double grouped_update(double x_prior_m, const std::vector<MeasurementGroup>& groups,
                      const std::vector<std::vector<double>>& gains) {
  if (groups.empty()) throw DataError("grouped_update: no measurement groups");
  if (gains.size() != groups.size()) {
    throw DataError("grouped_update: gain count differs from group count");
  }
  double x = x_prior_m;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int i = 0; i < kGroupSize; ++i) {
      x += gains[g][static_cast<std::size_t>(i)] *
           groups[g].d_innov[static_cast<std::size_t>(i)];
    }
  }
  return x;
}

// --- checkpoints -----------------------------------------------------------

namespace {
constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "qnet-gain-checkpoint";

nlohmann::json config_to_json(const GainNetConfig& c) {
  return nlohmann::json{{"gru_hidden_q", c.gru_hidden_q},
                        {"gru_hidden_sigma", c.gru_hidden_sigma},
                        {"gru_hidden_s", c.gru_hidden_s},
                        {"update_width", c.update_width},
                        {"evolution_width", c.evolution_width},
                        {"measurement_width", c.measurement_width},
                        {"gain_hidden_width", c.gain_hidden_width},
                        {"refine_width", c.refine_width}};
}

GainNetConfig config_from_json(const nlohmann::json& j) {
  GainNetConfig c;
  c.gru_hidden_q = j.at("gru_hidden_q").get<int>();
  c.gru_hidden_sigma = j.at("gru_hidden_sigma").get<int>();
  c.gru_hidden_s = j.at("gru_hidden_s").get<int>();
  c.update_width = j.at("update_width").get<int>();
  c.evolution_width = j.at("evolution_width").get<int>();
  c.measurement_width = j.at("measurement_width").get<int>();
  c.gain_hidden_width = j.at("gain_hidden_width").get<int>();
  c.refine_width = j.at("refine_width").get<int>();
  c.validate();
  return c;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GainNetConfig& config,
                     const ParameterStore& store) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["config"] = config_to_json(config);
  nlohmann::json slices = nlohmann::json::array();
  for (const auto& s : store.slices()) {
    slices.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  }
  j["slices"] = std::move(slices);
  j["values"] = store.values;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path.string() + "': " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) {
      throw DataError("checkpoint '" + path.string() + "': unknown format field");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint '" + path.string() + "': unsupported version");
    }
    Checkpoint ck;
    ck.config = config_from_json(j.at("config"));
    ck.net = GainNet::create(ck.store, ck.config);

    const auto values = j.at("values").get<std::vector<double>>();
    if (values.size() != ck.store.size()) {
      throw DataError("checkpoint '" + path.string() + "': value count " +
                      std::to_string(values.size()) + " does not match configuration (" +
                      std::to_string(ck.store.size()) + " parameters)");
    }
    const auto& slices = j.at("slices");
    if (slices.size() != ck.store.slices().size()) {
      throw DataError("checkpoint '" + path.string() + "': slice table mismatch");
    }
    for (std::size_t i = 0; i < slices.size(); ++i) {
      const auto& expect = ck.store.slices()[i];
      if (slices[i].at("name").get<std::string>() != expect.name ||
          slices[i].at("offset").get<std::size_t>() != expect.offset ||
          slices[i].at("size").get<std::size_t>() != expect.size) {
        throw DataError("checkpoint '" + path.string() + "': slice '" + expect.name +
                        "' does not match the configured layout");
      }
    }
    ck.store.values = values;
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path.string() + "': " + e.what());
  }
}

}  // namespace qnet
