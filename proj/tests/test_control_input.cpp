#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "qnet/control_input.hpp"
#include "qnet/fft.hpp"

using namespace qnet;

namespace {

SectionGeometry five_segment_geometry(double length = 500.0, double q_max = 450.0) {
  SectionGeometry g;
  g.section_id = "t";
  g.length_m = length;
  g.lanes = 2;
  g.q_max_m = q_max;
  const double step = length / 5.0;
  for (int i = 0; i < 5; ++i) {
    g.segments.push_back({i * step, (i + 1) * step});
  }
  return g;
}

SensorDay day_from_net(const std::vector<double>& net_flow) {
  // builds monotone A/D with A - D equal to the requested net flow
  SensorDay day;
  day.t0 = parse_iso_datetime("2023-11-10T06:00:00");
  day.cum_inflow.resize(net_flow.size());
  day.cum_outflow.resize(net_flow.size());
  double floor_offset = 0.0;
  for (double v : net_flow) floor_offset = std::min(floor_offset, v);
  for (std::size_t i = 0; i < net_flow.size(); ++i) {
    day.cum_outflow[i] = 100.0 * static_cast<double>(i);
    day.cum_inflow[i] = day.cum_outflow[i] + net_flow[i] - floor_offset;
  }
  return day;
}

}  // namespace

TEST_SUITE("control_input") {

TEST_CASE("fft agrees with a direct DFT") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (std::size_t n : {16u, 60u, 97u, 360u}) {  // power of two, smooth, prime, smooth
    std::vector<double> x(n);
    for (auto& v : x) v = dist(rng);
    const auto spectrum = fft_forward(x);
    // direct DFT oracle
    for (std::size_t k = 0; k < n; k += std::max<std::size_t>(1, n / 7)) {
      std::complex<double> acc(0.0, 0.0);
      for (std::size_t t = 0; t < n; ++t) {
        const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t) /
                           static_cast<double>(n);
        acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
      }
      CHECK(std::abs(spectrum[k] - acc) <= 1e-9 * static_cast<double>(n));
    }
    // round trip
    const auto back = fft_inverse_real(spectrum);
    for (std::size_t t = 0; t < n; ++t) CHECK(back[t] == doctest::Approx(x[t]).epsilon(1e-12));
  }
}

TEST_CASE("reconstruct_queue_raw plug-in values") {
  const auto geometry = five_segment_geometry();
  ReconstructionParams params;
  params.k_jam = 0.1;
  params.k_free = 0.02;

  SensorDay day;
  day.t0 = 0;
  SUBCASE("free-flow occupancy exactly cancels") {
    day.cum_inflow = {20.0};
    day.cum_outflow = {0.0};
    CHECK(reconstruct_queue_raw(day, params, geometry)[0] == doctest::Approx(0.0));
  }
  SUBCASE("ten extra vehicles over the floor") {
    day.cum_inflow = {30.0};
    day.cum_outflow = {0.0};
    CHECK(reconstruct_queue_raw(day, params, geometry)[0] == doctest::Approx(62.5));
  }
  SUBCASE("drift term removes ten vehicles at t = 1000 s") {
    params.lambda_c = 0.01;
    day.cum_inflow.assign(101, 30.0);
    day.cum_outflow.assign(101, 0.0);
    const auto q = reconstruct_queue_raw(day, params, geometry);
    CHECK(q[100] == doctest::Approx(0.0));  // t = 100 steps * 10 s = 1000 s
  }
}

TEST_CASE("reconstruct_queue_raw is affine in net accumulation") {
  const auto geometry = five_segment_geometry();
  ReconstructionParams params;
  params.k_jam = 0.1;
  params.k_free = 0.02;
  const double floor_term = geometry.lanes * geometry.length_m * params.k_free;

  SensorDay day;
  day.t0 = 0;
  day.cum_inflow = {floor_term + 8.0};
  day.cum_outflow = {0.0};
  const double q1 = reconstruct_queue_raw(day, params, geometry)[0];
  day.cum_inflow = {floor_term + 16.0};
  const double q2 = reconstruct_queue_raw(day, params, geometry)[0];
  CHECK(q2 == doctest::Approx(2.0 * q1).epsilon(1e-12));
}

TEST_CASE("estimate_lambda_offline fits the boundary-window slope") {
  SUBCASE("exact linear drift") {
    std::vector<double> net(1000);
    for (std::size_t i = 0; i < net.size(); ++i) net[i] = 0.05 * (10.0 * static_cast<double>(i));
    const auto day = day_from_net(net);
    CHECK(estimate_lambda_offline(day, 60) == doctest::Approx(0.05).epsilon(1e-9));
  }
  SUBCASE("constant net flow gives zero slope") {
    std::vector<double> net(1000, 7.0);
    const auto day = day_from_net(net);
    CHECK(estimate_lambda_offline(day, 60) == doctest::Approx(0.0));
  }
  SUBCASE("noisy drift recovered within tolerance") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> net(2000);
    for (std::size_t i = 0; i < net.size(); ++i) {
      net[i] = 0.05 * (10.0 * static_cast<double>(i)) + noise(rng);
    }
    const auto day = day_from_net(net);
    CHECK(estimate_lambda_offline(day, 180) == doctest::Approx(0.05).epsilon(0.1));
    CHECK(std::abs(estimate_lambda_offline(day, 180) - 0.05) <= 0.005);
  }
  SUBCASE("day shorter than two windows is a data error") {
    std::vector<double> net(100, 1.0);
    const auto day = day_from_net(net);
    CHECK_THROWS_AS(estimate_lambda_offline(day, 60), DataError);
  }
}

TEST_CASE("estimate_lambda_online is causal and converges to the offline fit") {
  SUBCASE("linear drift converges") {
    std::vector<double> net(2000);
    for (std::size_t i = 0; i < net.size(); ++i) net[i] = 0.05 * (10.0 * static_cast<double>(i));
    const auto day = day_from_net(net);
    const auto online = estimate_lambda_online(day, 180);
    const double offline = estimate_lambda_offline(day, 180);
    CHECK(std::abs(online.back() - offline) <= 0.01 * std::abs(offline));
  }
  SUBCASE("zero drift stays zero") {
    std::vector<double> net(500, 3.0);
    const auto day = day_from_net(net);
    for (double v : estimate_lambda_online(day, 60)) CHECK(v == doctest::Approx(0.0));
  }
  SUBCASE("piecewise drift lands between the two rates") {
    std::vector<double> net(2000);
    for (std::size_t i = 0; i < net.size(); ++i) {
      const double t = 10.0 * static_cast<double>(i);
      net[i] = i < 1000 ? 0.03 * t : 0.03 * 10000.0 + 0.07 * (t - 10000.0);
    }
    const auto day = day_from_net(net);
    const double final_rate = estimate_lambda_online(day, 180).back();
    CHECK(final_rate > 0.03);
    CHECK(final_rate < 0.07);
  }
  SUBCASE("before the minimum window the estimate is zero") {
    std::vector<double> net(500);
    for (std::size_t i = 0; i < net.size(); ++i) net[i] = 0.05 * 10.0 * static_cast<double>(i);
    const auto day = day_from_net(net);
    const auto online = estimate_lambda_online(day, 100);
    for (std::size_t i = 0; i + 1 < 99; ++i) CHECK(online[i] == 0.0);
    CHECK(online[99] != 0.0);
  }
}

TEST_CASE("affine_rescale maps extremes to [0, q_max]") {
  CHECK(affine_rescale({1.0, 2.0, 3.0}, 450.0) == std::vector<double>{0.0, 225.0, 450.0});
  CHECK(affine_rescale({-5.0, 0.0, 5.0}, 100.0) == std::vector<double>{0.0, 50.0, 100.0});
  SUBCASE("already spanning signal is unchanged") {
    const std::vector<double> s = {0.0, 100.0, 450.0};
    CHECK(affine_rescale(s, 450.0) == s);
  }
  SUBCASE("constant signal is a scaling error") {
    CHECK_THROWS_AS(affine_rescale({2.0, 2.0, 2.0}, 450.0), NumericError);
  }
}

TEST_CASE("bandpass_filter frequency response") {
  const std::size_t n = 1024;
  const double dt = 10.0;
  SUBCASE("constant signal is removed entirely") {
    const auto out = bandpass_filter(std::vector<double>(n, 5.0), 1e-4, 5e-3, dt);
    for (double v : out) CHECK(std::abs(v) <= 1e-9);
  }
  SUBCASE("pure in-band sinusoid passes unchanged") {
    std::vector<double> x(n);
    const double f = 10.0 / (static_cast<double>(n) * dt);  // exactly on bin 10
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) * dt);
    }
    const auto out = bandpass_filter(x, 1e-4, 5e-3, dt);
    double rms = 0.0;
    for (std::size_t i = 0; i < n; ++i) rms += (out[i] - x[i]) * (out[i] - x[i]);
    CHECK(std::sqrt(rms / static_cast<double>(n)) <= 1e-6);
  }
  SUBCASE("DC and out-of-band tone are stripped, in-band tone kept") {
    std::vector<double> in_band(n), compound(n);
    const double f_in = 10.0 / (static_cast<double>(n) * dt);
    const double f_out = 410.0 / (static_cast<double>(n) * dt);  // approx 0.04 Hz
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) * dt;
      in_band[i] = std::sin(2.0 * std::numbers::pi * f_in * t);
      compound[i] = 3.0 + in_band[i] + 0.5 * std::sin(2.0 * std::numbers::pi * f_out * t);
    }
    const auto out = bandpass_filter(compound, 1e-4, 5e-3, dt);
    double rms = 0.0;
    for (std::size_t i = 0; i < n; ++i) rms += (out[i] - in_band[i]) * (out[i] - in_band[i]);
    CHECK(std::sqrt(rms / static_cast<double>(n)) <= 1e-6);
  }
  SUBCASE("length below 16 is rejected") {
    CHECK_THROWS_AS(bandpass_filter(std::vector<double>(8, 1.0), 1e-4, 5e-3, dt), DataError);
  }
}

TEST_CASE("bandpass_filter is linear") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  const std::size_t n = 300;
  std::vector<double> s1(n), s2(n), mix(n);
  for (std::size_t i = 0; i < n; ++i) {
    s1[i] = dist(rng);
    s2[i] = dist(rng);
    mix[i] = 1.7 * s1[i] - 0.4 * s2[i];
  }
  const auto f1 = bandpass_filter(s1, 1e-4, 5e-3);
  const auto f2 = bandpass_filter(s2, 1e-4, 5e-3);
  const auto fm = bandpass_filter(mix, 1e-4, 5e-3);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(std::abs(fm[i] - (1.7 * f1[i] - 0.4 * f2[i])) <= 1e-9);
  }
}

TEST_CASE("derive_control composes correction, filtering and differencing") {
  const auto geometry = five_segment_geometry();

  SUBCASE("zero counts give zero control") {
    SensorDay day;
    day.t0 = 0;
    day.cum_inflow.assign(600, 0.0);
    day.cum_outflow.assign(600, 0.0);
    const auto series = derive_control(day, geometry, ControlMode::offline);
    for (double v : series.u) CHECK(v == 0.0);
  }

  SUBCASE("partial sums of u telescope to the filtered signal") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> dist(0.0, 3.0);
    std::vector<double> net(720);
    double acc = 0.0;
    for (std::size_t i = 0; i < net.size(); ++i) {
      const double t = 10.0 * static_cast<double>(i);
      acc = 40.0 * std::sin(2.0 * std::numbers::pi * t / 3600.0);
      net[i] = 100.0 + acc + dist(rng);
    }
    const auto day = day_from_net(net);
    const auto series = derive_control(day, geometry, ControlMode::offline);
    double partial = series.reconstructed_q[0];
    for (std::size_t i = 1; i < series.u.size(); ++i) {
      partial += series.u[i];
      CHECK(partial == doctest::Approx(series.reconstructed_q[i]).epsilon(1e-9));
    }
  }

  SUBCASE("online and offline control agree after the first hour") {
    // drift-dominated day with an in-band oscillation on top
    std::vector<double> net(1080);
    for (std::size_t i = 0; i < net.size(); ++i) {
      const double t = 10.0 * static_cast<double>(i);
      net[i] = 0.05 * t + 20.0 * std::sin(2.0 * std::numbers::pi * t / 300.0);
    }
    const auto day = day_from_net(net);
    const auto offline = derive_control(day, geometry, ControlMode::offline);
    const auto online = derive_control(day, geometry, ControlMode::online);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 360; i < net.size(); ++i) {
      diff += (online.u[i] - offline.u[i]) * (online.u[i] - offline.u[i]);
      ref += offline.u[i] * offline.u[i];
    }
    CHECK(std::sqrt(diff) <= 0.10 * std::sqrt(ref));
  }
}

}  // TEST_SUITE
