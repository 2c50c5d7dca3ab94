#include <random>

#include "doctest.h"
#include "qnet/domain.hpp"

using namespace qnet;

TEST_SUITE("domain") {

TEST_CASE("iso timestamps round-trip") {
  const char* stamps[] = {"2023-11-10T06:00:00", "1999-12-31T23:59:59",
                          "2026-02-28T00:00:00"};
  for (const char* s : stamps) {
    CHECK(format_iso_datetime(parse_iso_datetime(s)) == s);
  }
  CHECK(parse_iso_datetime("2023-11-10T06:00:10") -
            parse_iso_datetime("2023-11-10T06:00:00") ==
        10);
  CHECK(seconds_of_day(parse_iso_datetime("2023-11-10T07:30:00")) == 7 * 3600 + 1800);
  CHECK_THROWS_AS(parse_iso_datetime("2023-11-10"), DataError);
  CHECK_THROWS_AS(parse_iso_datetime("2023-13-10T00:00:00"), DataError);
}

TEST_CASE("clamp_queue clamps to [0, q_max]") {
  CHECK(clamp_queue(-3.0, 450.0) == 0.0);
  CHECK(clamp_queue(9999.0, 450.0) == 450.0);
  CHECK(clamp_queue(120.0, 450.0) == 120.0);
}

TEST_CASE("clamp_queue is idempotent and monotone") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-1000.0, 1000.0);
  double prev_x = -1e9, prev_y = 0.0;
  std::vector<double> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(dist(rng));
  std::sort(xs.begin(), xs.end());
  for (double x : xs) {
    const double y = clamp_queue(x, 450.0);
    CHECK(clamp_queue(y, 450.0) == y);
    if (prev_x > -1e9) CHECK(y >= prev_y);
    prev_x = x;
    prev_y = y;
  }
}

TEST_CASE("expand_afcd replicates each value over six steps") {
  SUBCASE("one segment, one interval") {
    const auto out = expand_afcd({{12.0}}, 6);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == std::vector<double>{12.0, 12.0, 12.0, 12.0, 12.0, 12.0});
  }
  SUBCASE("two intervals") {
    const auto out = expand_afcd({{12.0, 3.0}}, 12);
    REQUIRE(out[0].size() == 12);
    for (std::size_t t = 0; t < 6; ++t) CHECK(out[0][t] == 12.0);
    for (std::size_t t = 6; t < 12; ++t) CHECK(out[0][t] == 3.0);
  }
  SUBCASE("steps beyond coverage is an alignment error") {
    CHECK_THROWS_AS(expand_afcd({{12.0}}, 9), DataError);
  }
  SUBCASE("a fully unused trailing interval is an alignment error") {
    CHECK_THROWS_AS(expand_afcd({{12.0, 3.0}}, 6), DataError);
  }
  SUBCASE("trailing partial interval is fine") {
    CHECK(expand_afcd({{12.0, 3.0}}, 8)[0].size() == 8);
  }
}

TEST_CASE("expand then subsampling every 6th step recovers the 60 s series") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(0.5, 20.0);
  std::vector<std::vector<double>> afcd(3, std::vector<double>(40));
  for (auto& seg : afcd) {
    for (auto& v : seg) v = dist(rng);
  }
  const auto expanded = expand_afcd(afcd, 240);
  for (std::size_t s = 0; s < afcd.size(); ++s) {
    for (std::size_t k = 0; k < afcd[s].size(); ++k) {
      CHECK(expanded[s][6 * k] == afcd[s][k]);
    }
  }
}

TEST_CASE("impute_missing forward-fills and back-fills the leading gap") {
  using V = std::vector<std::optional<double>>;
  SUBCASE("forward fill") {
    const V in = {5.0, std::nullopt, std::nullopt, 7.0};
    CHECK(impute_missing(std::span<const std::optional<double>>(in)) ==
          std::vector<double>{5.0, 5.0, 5.0, 7.0});
  }
  SUBCASE("leading gap back-fills from the first present value") {
    const V in = {std::nullopt, 4.0};
    CHECK(impute_missing(std::span<const std::optional<double>>(in)) ==
          std::vector<double>{4.0, 4.0});
  }
  SUBCASE("all missing is a data error") {
    const V in = {std::nullopt, std::nullopt};
    CHECK_THROWS_AS(impute_missing(std::span<const std::optional<double>>(in)), DataError);
  }
}

TEST_CASE("impute_missing is idempotent and preserves present values") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(1.0, 15.0);
  std::bernoulli_distribution missing(0.3);
  AfcdSeries series(2, std::vector<std::optional<double>>(50));
  series[0][0] = dist(rng);
  series[1][0] = dist(rng);
  for (auto& seg : series) {
    for (auto& v : seg) {
      if (!missing(rng)) v = dist(rng);
    }
  }
  const auto once = impute_missing(series);
  AfcdSeries as_present(once.size());
  for (std::size_t s = 0; s < once.size(); ++s) {
    for (double v : once[s]) as_present[s].push_back(v);
  }
  CHECK(impute_missing(as_present) == once);
  for (std::size_t s = 0; s < series.size(); ++s) {
    for (std::size_t i = 0; i < series[s].size(); ++i) {
      if (series[s][i].has_value()) CHECK(once[s][i] == *series[s][i]);
    }
  }
}

TEST_CASE("geometry invariants are enforced") {
  SectionGeometry g;
  g.section_id = "t";
  g.length_m = 300.0;
  g.lanes = 2;
  g.q_max_m = 300.0;
  g.segments = {{0.0, 100.0}, {100.0, 200.0}, {200.0, 300.0}};
  CHECK_NOTHROW(g.validate());

  SUBCASE("gap between segments") {
    g.segments[1].start_m = 110.0;
    CHECK_THROWS_AS(g.validate(), DataError);
  }
  SUBCASE("first segment must start at the stop line") {
    g.segments[0].start_m = 5.0;
    CHECK_THROWS_AS(g.validate(), DataError);
  }
  SUBCASE("q_max above length") {
    g.q_max_m = 400.0;
    CHECK_THROWS_AS(g.validate(), DataError);
  }
  SUBCASE("empty segment") {
    g.segments[2].end_m = 200.0;
    CHECK_THROWS_AS(g.validate(), DataError);
  }
}

TEST_CASE("sensor day invariants") {
  SensorDay day;
  day.t0 = parse_iso_datetime("2023-11-10T06:00:00");
  day.cum_inflow = {0, 1, 2, 3, 4, 5, 6, 6, 7, 8, 9, 10};
  day.cum_outflow = {0, 0, 1, 2, 3, 4, 5, 5, 6, 7, 8, 9};
  day.afcd_speeds.assign(2, std::vector<std::optional<double>>(2, 10.0));
  CHECK_NOTHROW(day.validate());

  SUBCASE("decreasing counts rejected") {
    day.cum_inflow[5] = 0.0;
    CHECK_THROWS_AS(day.validate(), DataError);
  }
  SUBCASE("negative counts rejected") {
    day.cum_outflow[0] = -1.0;
    CHECK_THROWS_AS(day.validate(), DataError);
  }
  SUBCASE("aFCD alignment beyond one partial interval rejected") {
    day.afcd_speeds.assign(2, std::vector<std::optional<double>>(4, 10.0));
    CHECK_THROWS_AS(day.validate(), DataError);
  }
}

}  // TEST_SUITE
