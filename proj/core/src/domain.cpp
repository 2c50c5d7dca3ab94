#include "qnet/domain.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <cmath>
#include <cstdio>

namespace qnet {

namespace {

// Howard Hinnant's days-from-civil algorithm; proleptic Gregorian calendar.
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * (m + (m > 2 ? -3 : 9)) + 2u) / 5u + d - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

int parse_int_field(std::string_view s, std::size_t pos, std::size_t len,
                    std::string_view what) {
  int value = 0;
  const char* first = s.data() + pos;
  auto [ptr, ec] = std::from_chars(first, first + len, value);
  if (ec != std::errc() || ptr != first + len) {
    throw DataError("bad " + std::string(what) + " in timestamp '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace

std::int64_t parse_iso_datetime(std::string_view iso) {
  // YYYY-MM-DDTHH:MM:SS (19 chars); a space separator is tolerated.
  if (iso.size() != 19 || iso[4] != '-' || iso[7] != '-' ||
      (iso[10] != 'T' && iso[10] != ' ') || iso[13] != ':' || iso[16] != ':') {
    throw DataError("timestamp not in YYYY-MM-DDTHH:MM:SS form: '" + std::string(iso) + "'");
  }
  const int year = parse_int_field(iso, 0, 4, "year");
  const int month = parse_int_field(iso, 5, 2, "month");
  const int day = parse_int_field(iso, 8, 2, "day");
  const int hour = parse_int_field(iso, 11, 2, "hour");
  const int minute = parse_int_field(iso, 14, 2, "minute");
  const int second = parse_int_field(iso, 17, 2, "second");
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 ||
      second > 60) {
    throw DataError("timestamp field out of range: '" + std::string(iso) + "'");
  }
  return days_from_civil(year, month, day) * 86400 + hour * 3600 + minute * 60 + second;
}

std::string format_iso_datetime(std::int64_t t) {
  std::int64_t days = t / 86400;
  std::int64_t sod = t % 86400;
  if (sod < 0) {
    sod += 86400;
    --days;
  }
  int y = 0, m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d", y, m, d,
                static_cast<int>(sod / 3600), static_cast<int>((sod / 60) % 60),
                static_cast<int>(sod % 60));
  return buf;
}

int seconds_of_day(std::int64_t t) {
  std::int64_t sod = t % 86400;
  if (sod < 0) sod += 86400;
  return static_cast<int>(sod);
}

void SectionGeometry::validate() const {
  if (lanes < 1) throw DataError("section '" + section_id + "': lanes must be >= 1");
  if (!(length_m > 0)) throw DataError("section '" + section_id + "': length_m must be > 0");
  if (!(q_max_m > 0) || q_max_m > length_m) {
    throw DataError("section '" + section_id + "': q_max_m must lie in (0, length_m]");
  }
  if (segments.empty()) throw DataError("section '" + section_id + "': no segments");
  if (segments.front().start_m != 0.0) {
    throw DataError("section '" + section_id + "': first segment must start at 0");
  }
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (!(segments[i].end_m > segments[i].start_m)) {
      throw DataError("section '" + section_id + "': segment " + std::to_string(i) +
                      " has end_m <= start_m");
    }
    if (i + 1 < segments.size() && segments[i].end_m != segments[i + 1].start_m) {
      throw DataError("section '" + section_id + "': segments " + std::to_string(i) +
                      " and " + std::to_string(i + 1) + " are not contiguous");
    }
  }
}

void SpeedRegimes::validate() const {
  if (!(0 < v_jam_mps && v_jam_mps < v_free_mps)) {
    throw DataError("speed regimes must satisfy 0 < v_jam < v_free");
  }
}

void SensorDay::validate() const {
  if (cum_inflow.size() != cum_outflow.size()) {
    throw DataError("cum_inflow and cum_outflow lengths differ");
  }
  auto check_monotone = [](const std::vector<double>& s, const char* name) {
    double prev = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 0.0) throw DataError(std::string(name) + " has a negative count");
      if (i > 0 && s[i] < prev) {
        throw DataError(std::string(name) + " is not non-decreasing at step " +
                        std::to_string(i));
      }
      prev = s[i];
    }
  };
  check_monotone(cum_inflow, "cum_inflow");
  check_monotone(cum_outflow, "cum_outflow");

  const std::size_t n = steps();
  if (!afcd_speeds.empty()) {
    const std::size_t intervals = afcd_speeds.front().size();
    for (const auto& seg : afcd_speeds) {
      if (seg.size() != intervals) throw DataError("aFCD segments have unequal lengths");
    }
    if (intervals == 0 || n > intervals * kStepsPerAfcdInterval ||
        n <= (intervals - 1) * kStepsPerAfcdInterval) {
      throw DataError("aFCD/count alignment error: " + std::to_string(intervals) +
                      " intervals vs " + std::to_string(n) + " steps");
    }
  }
  if (ground_truth_m && ground_truth_m->size() != n) {
    throw DataError("ground truth length differs from count series length");
  }
}

double clamp_queue(double x_m, double q_max_m) {
  assert(q_max_m > 0.0);
  return std::min(std::max(x_m, 0.0), q_max_m);
}

std::vector<std::vector<double>> expand_afcd(
    const std::vector<std::vector<double>>& afcd, std::size_t steps) {
  if (afcd.empty()) throw DataError("expand_afcd: no segments");
  const std::size_t intervals = afcd.front().size();
  if (steps > intervals * kStepsPerAfcdInterval ||
      (intervals > 0 && steps <= (intervals - 1) * kStepsPerAfcdInterval)) {
    throw DataError("expand_afcd alignment error: " + std::to_string(intervals) +
                    " intervals cannot cover " + std::to_string(steps) + " steps");
  }
  std::vector<std::vector<double>> out(afcd.size(), std::vector<double>(steps));
  for (std::size_t s = 0; s < afcd.size(); ++s) {
    if (afcd[s].size() != intervals) throw DataError("expand_afcd: ragged input");
    for (std::size_t t = 0; t < steps; ++t) {
      out[s][t] = afcd[s][t / kStepsPerAfcdInterval];
    }
  }
  return out;
}

std::vector<double> impute_missing(std::span<const std::optional<double>> series) {
  std::vector<double> out(series.size());
  std::size_t first_present = series.size();
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].has_value()) {
      first_present = i;
      break;
    }
  }
  if (first_present == series.size()) {
    throw DataError("impute_missing: series has no present values");
  }
  double last = *series[first_present];
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].has_value()) last = *series[i];
    out[i] = last;
  }
  return out;
}

std::vector<std::vector<double>> impute_missing(const AfcdSeries& series) {
  std::vector<std::vector<double>> out;
  out.reserve(series.size());
  for (std::size_t s = 0; s < series.size(); ++s) {
    try {
      out.push_back(impute_missing(std::span<const std::optional<double>>(series[s])));
    } catch (const DataError&) {
      throw DataError("impute_missing: segment " + std::to_string(s) +
                      " has no present values");
    }
  }
  return out;
}

}  // namespace qnet
