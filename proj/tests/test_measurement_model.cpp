#include <algorithm>
#include <random>

#include "doctest.h"
#include "qnet/measurement_model.hpp"

using namespace qnet;

namespace {

// Independent travel-time oracle: overlap of the segment with the queued
// region [0, x] travels at v_jam, the rest at v_free; speed is segment
// length over total traversal time.
double oracle_speed(double x, const Segment& seg, const SpeedRegimes& r) {
  auto overlap = [](double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  };
  const double queued_len = overlap(seg.start_m, seg.end_m, 0.0, x);
  const double free_len = seg.length() - queued_len;
  const double travel_time = queued_len / r.v_jam_mps + free_len / r.v_free_mps;
  return seg.length() / travel_time;
}

MeasurementModel test_model() {
  MeasurementModel m;
  m.geometry.section_id = "t";
  m.geometry.length_m = 500.0;
  m.geometry.lanes = 2;
  m.geometry.q_max_m = 500.0;
  m.geometry.segments = {{0, 100}, {100, 200}, {200, 300}, {300, 400}, {400, 500}};
  m.regimes = {14.0, 2.0};
  return m;
}

}  // namespace

TEST_SUITE("measurement_model") {

TEST_CASE("expected_speed piecewise branches") {
  const Segment seg{100.0, 200.0};
  const SpeedRegimes r{14.0, 2.0};
  CHECK(expected_speed(100.0, seg, r) == 14.0);  // x <= l: entirely unqueued
  CHECK(expected_speed(150.0, seg, r) == doctest::Approx(3.5).epsilon(1e-12));
  CHECK(expected_speed(250.0, seg, r) == 2.0);  // fully queued
}

TEST_CASE("expected_speed is continuous at the queued boundary") {
  const Segment seg{100.0, 200.0};
  const SpeedRegimes r{14.0, 2.0};
  // partial branch evaluated at x = r must equal v_jam exactly
  CHECK(expected_speed(200.0, seg, r) == 2.0);
  CHECK(expected_speed(100.0 + 1e-12, seg, r) == doctest::Approx(14.0).epsilon(1e-9));
}

TEST_CASE("expected_speeds maps every segment in order") {
  const auto model = test_model();
  SUBCASE("no queue") {
    const auto y = expected_speeds(0.0, model);
    for (double v : y) CHECK(v == 14.0);
  }
  SUBCASE("full queue") {
    const auto y = expected_speeds(500.0, model);
    for (double v : y) CHECK(v == 2.0);
  }
  SUBCASE("mid-section matches the per-segment oracle") {
    const auto y = expected_speeds(250.0, model);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] ==
            doctest::Approx(oracle_speed(250.0, model.geometry.segments[i], model.regimes))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("travel-time oracle: 1000 random draws agree to 1e-9") {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> pos(0.0, 600.0);
  std::uniform_real_distribution<double> len(10.0, 250.0);
  std::uniform_real_distribution<double> vj(1.0, 5.0);
  std::uniform_real_distribution<double> vf(8.0, 25.0);
  for (int k = 0; k < 1000; ++k) {
    Segment seg;
    seg.start_m = pos(rng);
    seg.end_m = seg.start_m + len(rng);
    const SpeedRegimes r{vf(rng), vj(rng)};
    const double x = pos(rng);
    CHECK(std::abs(expected_speed(x, seg, r) - oracle_speed(x, seg, r)) <= 1e-9);
  }
}

TEST_CASE("expected_speed is non-increasing in x and bounded") {
  const Segment seg{120.0, 260.0};
  const SpeedRegimes r{13.0, 2.5};
  double prev = 1e9;
  for (double x = 0.0; x <= 400.0; x += 0.5) {
    const double v = expected_speed(x, seg, r);
    CHECK(v <= prev + 1e-12);
    CHECK(v >= r.v_jam_mps);
    CHECK(v <= r.v_free_mps);
    prev = v;
  }
}

TEST_CASE("jacobian_h constant branches are zero") {
  const auto model = test_model();
  const Segment seg{100.0, 200.0};
  CHECK(segment_speed_derivative(50.0, seg, model.regimes) == 0.0);
  CHECK(segment_speed_derivative(250.0, seg, model.regimes) == 0.0);
}

TEST_CASE("jacobian_h matches central differences") {
  const auto model = test_model();
  const SpeedRegimes r = model.regimes;
  SUBCASE("single interior point at 1e-3 step") {
    const Segment seg{100.0, 200.0};
    const double x = 150.0;
    const double h = 1e-3;
    const double fd = (expected_speed(x + h, seg, r) - expected_speed(x - h, seg, r)) / (2 * h);
    const double analytic = segment_speed_derivative(x, seg, r);
    CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
  }
  SUBCASE("100 random interior points, 1e-6 relative") {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    for (int k = 0; k < 100; ++k) {
      const auto& seg = model.geometry.segments[static_cast<std::size_t>(k) %
                                                model.geometry.segments.size()];
      const double x = seg.start_m + unit(rng) * seg.length();
      const double h = 1e-4 * seg.length();
      const double fd =
          (expected_speed(x + h, seg, r) - expected_speed(x - h, seg, r)) / (2 * h);
      const double analytic = segment_speed_derivative(x, seg, r);
      CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("boundary derivative rule: right limit at l, interior at r, zero above") {
  const Segment seg{100.0, 200.0};
  const SpeedRegimes r{14.0, 2.0};
  const double at_l = segment_speed_derivative(100.0, seg, r);
  const double just_inside = segment_speed_derivative(100.0 + 1e-9, seg, r);
  CHECK(at_l == doctest::Approx(just_inside).epsilon(1e-6));
  CHECK(at_l < 0.0);
  CHECK(segment_speed_derivative(200.0, seg, r) < 0.0);
  CHECK(segment_speed_derivative(200.0 + 1e-9, seg, r) == 0.0);
}

TEST_CASE("estimate_regimes finds the two dominant modes") {
  std::mt19937_64 rng(303);
  SUBCASE("narrow clusters at 2 and 14 m/s") {
    std::normal_distribution<double> jam(2.0, 0.3), free_flow(14.0, 0.5);
    std::vector<double> sample;
    for (int i = 0; i < 400; ++i) sample.push_back(jam(rng));
    for (int i = 0; i < 900; ++i) sample.push_back(free_flow(rng));
    const auto regimes = estimate_regimes(sample);
    CHECK(std::abs(regimes.v_jam_mps - 2.0) <= 1.0);
    CHECK(std::abs(regimes.v_free_mps - 14.0) <= 1.0);
  }
  SUBCASE("clusters at 3 and 13 plus sparse noise") {
    std::normal_distribution<double> jam(3.0, 0.4), free_flow(13.0, 0.6);
    std::uniform_real_distribution<double> noise(0.5, 20.0);
    std::vector<double> sample;
    for (int i = 0; i < 500; ++i) sample.push_back(jam(rng));
    for (int i = 0; i < 700; ++i) sample.push_back(free_flow(rng));
    for (int i = 0; i < 60; ++i) sample.push_back(noise(rng));
    const auto regimes = estimate_regimes(sample);
    CHECK(std::abs(regimes.v_jam_mps - 3.0) <= 1.0);
    CHECK(std::abs(regimes.v_free_mps - 13.0) <= 1.0);
  }
  SUBCASE("unimodal distribution is an error") {
    std::vector<double> sample(500, 10.0);
    CHECK_THROWS_AS(estimate_regimes(sample), NumericError);
  }
  SUBCASE("too few samples is an error") {
    std::vector<double> sample(99, 10.0);
    CHECK_THROWS_AS(estimate_regimes(sample), DataError);
  }
}

}  // TEST_SUITE
