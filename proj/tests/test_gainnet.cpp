#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "qnet/gainnet.hpp"
#include "test_util.hpp"

using namespace qnet;

namespace {

constexpr FeatureScaling kScaling{450.0, 14.0};

GainFeatures random_features(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> speed(-6.0, 6.0);
  std::uniform_real_distribution<double> queue(-80.0, 80.0);
  GainFeatures f;
  f.d_meas = {speed(rng), speed(rng), speed(rng)};
  f.d_innov = {speed(rng), speed(rng), speed(rng)};
  f.d_evol = queue(rng);
  f.d_update = queue(rng);
  return f;
}

// Straight-line re-implementation of the a-e pipeline with its own matrix
// helpers; kept deliberately independent of the Tape/fc_apply code paths.
struct PipelineOracle {
  const ParameterStore& store;
  const GainNet& net;

  std::vector<double> dense(const DenseLayer& layer, const std::vector<double>& x) const {
    std::vector<double> y(static_cast<std::size_t>(layer.out_dim));
    for (int o = 0; o < layer.out_dim; ++o) {
      double acc = store.values[layer.b_offset + static_cast<std::size_t>(o)];
      for (int i = 0; i < layer.in_dim; ++i) {
        acc += store.values[layer.w_offset + static_cast<std::size_t>(o * layer.in_dim + i)] *
               x[static_cast<std::size_t>(i)];
      }
      y[static_cast<std::size_t>(o)] =
          layer.activation == Activation::relu ? std::max(0.0, acc) : acc;
    }
    return y;
  }

  std::vector<double> gru(const GruCell& cell, const std::vector<double>& x,
                          const std::vector<double>& h) const {
    const auto hd = static_cast<std::size_t>(cell.hidden_dim);
    const auto in = static_cast<std::size_t>(cell.in_dim);
    auto gate = [&](std::size_t w, std::size_t u, std::size_t b,
                    const std::vector<double>& hv, std::size_t j) {
      double acc = store.values[b + j];
      for (std::size_t i = 0; i < in; ++i) acc += store.values[w + j * in + i] * x[i];
      for (std::size_t k = 0; k < hd; ++k) acc += store.values[u + j * hd + k] * hv[k];
      return acc;
    };
    std::vector<double> z(hd), rh(hd), out(hd);
    for (std::size_t j = 0; j < hd; ++j) {
      z[j] = 1.0 / (1.0 + std::exp(-gate(cell.wz, cell.uz, cell.bz, h, j)));
    }
    for (std::size_t j = 0; j < hd; ++j) {
      rh[j] = h[j] / (1.0 + std::exp(-gate(cell.wr, cell.ur, cell.br, h, j)));
    }
    for (std::size_t j = 0; j < hd; ++j) {
      const double c = std::tanh(gate(cell.wh, cell.uh, cell.bh, rh, j));
      out[j] = (1.0 - z[j]) * h[j] + z[j] * c;
    }
    return out;
  }

  std::vector<double> operator()(const GainFeatures& f, const GainNetState& state) const {
    auto concat = [](const std::vector<double>& a, const std::vector<double>& b) {
      std::vector<double> out = a;
      out.insert(out.end(), b.begin(), b.end());
      return out;
    };
    const auto q_hat = gru(net.gru_q, dense(net.fc_update, {f.d_update / kScaling.q_max_m}),
                           state.hidden_q);
    const auto sigma =
        gru(net.gru_sigma,
            concat(q_hat, dense(net.fc_evolution, {f.d_evol / kScaling.q_max_m})),
            state.hidden_sigma);
    std::vector<double> speeds;
    for (double v : f.d_meas) speeds.push_back(v / kScaling.v_free_mps);
    for (double v : f.d_innov) speeds.push_back(v / kScaling.v_free_mps);
    const auto s_hat =
        gru(net.gru_s, concat(dense(net.fc_sigma, sigma), dense(net.fc_speeds, speeds)),
            state.hidden_s);
    if (net.config.gain_hidden_width > 0) {
      return dense(net.fc_gain, dense(net.fc_gain_hidden, concat(sigma, s_hat)));
    }
    return dense(net.fc_gain, concat(sigma, s_hat));
  }
};

}  // namespace

TEST_SUITE("gainnet") {

TEST_CASE("parameter budget: default config is a 954-parameter network") {
  const GainNetConfig config;
  const std::size_t expected = parameter_count(config);
  CHECK(expected <= 1000);

  ParameterStore store;
  (void)GainNet::create(store, config);
  CHECK(store.size() == expected);  // enumeration audit
  CHECK(store.size() == 954);
}

TEST_CASE("parameter count tracks configuration changes by the closed form") {
  GainNetConfig config;
  const auto base = parameter_count(config);
  GainNetConfig wider = config;
  wider.gru_hidden_s += 1;
  // one extra hidden unit in the s-GRU: 3 gates x (in + hid + hid_old + 1 + 1 bias)
  // plus the widened consumers (d and e read S_hat)
  ParameterStore store;
  (void)GainNet::create(store, wider);
  CHECK(parameter_count(wider) == store.size());
  CHECK(parameter_count(wider) > base);

  SUBCASE("zero-width config is rejected") {
    GainNetConfig bad = config;
    bad.measurement_width = 0;
    CHECK_THROWS_AS(parameter_count(bad), DataError);
  }
}

TEST_CASE("build_groups excludes boundary segments") {
  SUBCASE("five segments give three interior groups") {
    const std::vector<double> y(5, 10.0), prev(5, 10.0), pred(5, 10.0);
    const auto groups = build_groups(y, prev, pred);
    REQUIRE(groups.size() == 3);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      CHECK(groups[g].segment == g + 1);
      CHECK(groups[g].d_meas.size() == 3);
      CHECK(groups[g].d_innov.size() == 3);
    }
  }
  SUBCASE("identical vectors give zero features") {
    const std::vector<double> y = {12.0, 9.0, 4.0, 2.0, 13.0};
    for (const auto& g : build_groups(y, y, y)) {
      for (double v : g.d_meas) CHECK(v == 0.0);
      for (double v : g.d_innov) CHECK(v == 0.0);
    }
  }
  SUBCASE("three segments give exactly one group") {
    const std::vector<double> y(3, 5.0);
    CHECK(build_groups(y, y, y).size() == 1);
  }
  SUBCASE("fewer than three segments is a grouping error") {
    const std::vector<double> y(2, 5.0);
    CHECK_THROWS_AS(build_groups(y, y, y), DataError);
  }
}

TEST_CASE("zero parameters force the gain to the d-block bias") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 rng(3);
  const auto features = random_features(rng);

  SUBCASE("all-zero parameters give a zero gain") {
    const auto result = compute_gain(store, net, features, net.zero_state(), kScaling);
    CHECK(result.gain == std::vector<double>{0.0, 0.0, 0.0});
  }
  SUBCASE("a lone d-block bias passes straight through") {
    store.values[net.fc_gain.b_offset + 0] = 0.25;
    store.values[net.fc_gain.b_offset + 2] = -1.5;
    const auto result = compute_gain(store, net, features, net.zero_state(), kScaling);
    CHECK(result.gain == std::vector<double>{0.25, 0.0, -1.5});
  }
}

TEST_CASE("fixed seed and features give a bit-identical gain") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 init(9);
  net.init(store, init);
  std::mt19937_64 rng(10);
  const auto features = random_features(rng);
  auto state = net.zero_state();
  const auto a = compute_gain(store, net, features, state, kScaling);
  const auto b = compute_gain(store, net, features, state, kScaling);
  CHECK(a.gain == b.gain);
  CHECK(a.state.hidden_sigma == b.state.hidden_sigma);
}

TEST_CASE("pipeline equals a straight-line re-implementation to 1e-12") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 init(11);
  net.init(store, init);
  const PipelineOracle oracle{store, net};

  std::mt19937_64 rng(12);
  auto state = net.zero_state();
  for (int step = 0; step < 5; ++step) {
    const auto features = random_features(rng);
    const auto expected = oracle(features, state);
    const auto result = compute_gain(store, net, features, state, kScaling);
    REQUIRE(result.gain.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(std::abs(result.gain[i] - expected[i]) <= 1e-12);
    }
    state = result.state;  // carries the refined hidden state forward
  }
}

TEST_CASE("traced pipeline reproduces the untraced values and passes fd checks") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 init(13);
  net.init(store, init);

  std::mt19937_64 rng(14);
  const auto features = random_features(rng);
  const auto state = net.zero_state();
  const std::vector<double> probe = {0.7, -1.3, 0.4};

  auto forward_value = [&]() {
    const auto out = compute_gain(store, net, features, state, kScaling);
    return probe[0] * out.gain[0] + probe[1] * out.gain[1] + probe[2] * out.gain[2];
  };

  Tape tape(store);
  const auto d_innov = tape.input(features.d_innov);
  const auto traced = compute_gain(tape, net, features.d_meas, d_innov,
                                   tape.scalar_input(features.d_evol),
                                   tape.scalar_input(features.d_update),
                                   tape.input(state.hidden_q), tape.input(state.hidden_sigma),
                                   tape.input(state.hidden_s), kScaling);

  const auto untraced = compute_gain(store, net, features, state, kScaling);
  for (int i = 0; i < kGroupSize; ++i) {
    CHECK(tape.value(traced.gain)[static_cast<std::size_t>(i)] ==
          untraced.gain[static_cast<std::size_t>(i)]);
  }
  CHECK(tape.value(traced.hidden_sigma) == untraced.state.hidden_sigma);

  tape.accumulate_output_grad(traced.gain, probe);
  tape.run_backward();
  std::uniform_int_distribution<std::size_t> pick(0, store.size() - 1);
  for (int k = 0; k < 50; ++k) {
    const std::size_t idx = pick(rng);
    const double numeric = qnet::testing::numeric_gradient(store, idx, forward_value);
    CHECK_MESSAGE(qnet::testing::gradient_close(tape.param_grads()[idx], numeric),
                  "param ", store.slice_name_at(idx), " analytic=", tape.param_grads()[idx],
                  " numeric=", numeric);
  }
}

TEST_CASE("grouped_update sums the per-group dot products") {
  std::vector<MeasurementGroup> groups(1);
  groups[0].d_innov = {5.0, -2.0, 7.0};
  groups[0].d_meas = {0.0, 0.0, 0.0};

  SUBCASE("all gains zero returns the prior") {
    CHECK(grouped_update(120.0, groups, {{0.0, 0.0, 0.0}}) == 120.0);
  }
  SUBCASE("unit middle gain picks the middle innovation") {
    CHECK(grouped_update(120.0, groups, {{0.0, 1.0, 0.0}}) == doctest::Approx(118.0));
  }
  SUBCASE("three groups match brute-force summation") {
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    std::vector<MeasurementGroup> gs(3);
    std::vector<std::vector<double>> gains(3, std::vector<double>(3));
    double expected = 50.0;
    for (auto& g : gs) g.d_innov = {dist(rng), dist(rng), dist(rng)};
    for (auto& k : gains) k = {dist(rng), dist(rng), dist(rng)};
    for (int g = 0; g < 3; ++g) {
      for (int i = 0; i < 3; ++i) {
        expected += gains[static_cast<std::size_t>(g)][static_cast<std::size_t>(i)] *
                    gs[static_cast<std::size_t>(g)].d_innov[static_cast<std::size_t>(i)];
      }
    }
    CHECK(grouped_update(50.0, gs, gains) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("no groups is an error") {
    CHECK_THROWS_AS(grouped_update(0.0, {}, {}), DataError);
  }
}

TEST_CASE("grouped_update is linear in the innovations for frozen gains") {
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> dist(-3.0, 3.0);
  std::vector<MeasurementGroup> groups(4);
  std::vector<std::vector<double>> gains(4, std::vector<double>(3));
  for (auto& g : groups) g.d_innov = {dist(rng), dist(rng), dist(rng)};
  for (auto& k : gains) k = {dist(rng), dist(rng), dist(rng)};

  const double base = grouped_update(0.0, groups, gains);
  auto scaled = groups;
  for (auto& g : scaled) {
    for (auto& v : g.d_innov) v *= 2.5;
  }
  CHECK(grouped_update(0.0, scaled, gains) == doctest::Approx(2.5 * base).epsilon(1e-12));
}

TEST_CASE("per-group states are independent of processing order") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 init(17);
  net.init(store, init);

  std::mt19937_64 rng(18);
  std::vector<GainFeatures> features;
  for (int g = 0; g < 4; ++g) features.push_back(random_features(rng));
  std::vector<GainNetState> states(4, net.zero_state());

  std::vector<GainResult> forward, reversed(4);
  for (int g = 0; g < 4; ++g) {
    forward.push_back(compute_gain(store, net, features[static_cast<std::size_t>(g)],
                                   states[static_cast<std::size_t>(g)], kScaling));
  }
  for (int g = 3; g >= 0; --g) {
    reversed[static_cast<std::size_t>(g)] =
        compute_gain(store, net, features[static_cast<std::size_t>(g)],
                     states[static_cast<std::size_t>(g)], kScaling);
  }
  for (int g = 0; g < 4; ++g) {
    CHECK(forward[static_cast<std::size_t>(g)].gain ==
          reversed[static_cast<std::size_t>(g)].gain);
  }
}

TEST_CASE("gain dimensions are independent of the segment count") {
  ParameterStore store;
  const auto net = GainNet::create(store, GainNetConfig{});
  std::mt19937_64 init(19);
  net.init(store, init);

  for (std::size_t n : {5u, 8u}) {
    std::vector<double> y(n), prev(n), pred(n);
    std::mt19937_64 rng(20 + n);
    std::uniform_real_distribution<double> dist(2.0, 14.0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = dist(rng);
      prev[i] = dist(rng);
      pred[i] = dist(rng);
    }
    const auto groups = build_groups(y, prev, pred);
    CHECK(groups.size() == n - 2);
    for (const auto& group : groups) {
      GainFeatures f{group.d_meas, group.d_innov, 10.0, -5.0};
      const auto result = compute_gain(store, net, f, net.zero_state(), kScaling);
      CHECK(result.gain.size() == 3);
      for (double v : result.gain) CHECK(std::isfinite(v));
    }
  }
}

TEST_CASE("checkpoints round-trip and reject shape mismatches") {
  const auto path = std::filesystem::temp_directory_path() / "qnet_test_checkpoint.json";
  ParameterStore store;
  const GainNetConfig config;
  const auto net = GainNet::create(store, config);
  std::mt19937_64 init(21);
  net.init(store, init);

  save_checkpoint(path, config, store);
  const auto loaded = load_checkpoint(path);
  CHECK(loaded.store.values == store.values);
  CHECK(loaded.config.gru_hidden_sigma == config.gru_hidden_sigma);

  SUBCASE("value-count mismatch fails loudly") {
    auto broken = store;
    broken.values.pop_back();
    // write a checkpoint whose config no longer matches its values
    const auto bad_path =
        std::filesystem::temp_directory_path() / "qnet_test_checkpoint_bad.json";
    save_checkpoint(bad_path, config, broken);
    CHECK_THROWS_AS(load_checkpoint(bad_path), DataError);
    std::filesystem::remove(bad_path);
  }
  std::filesystem::remove(path);
}

}  // TEST_SUITE
