#include "qnet/csv.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace qnet {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  return out;
}

void expect_header(const std::string& line, const std::string& expected,
                   const std::filesystem::path& path) {
  std::string stripped = line;
  while (!stripped.empty() && (stripped.back() == '\r' || stripped.back() == '\n')) {
    stripped.pop_back();
  }
  if (stripped != expected) {
    throw DataError("'" + path.string() + "': expected header '" + expected +
                    "', got '" + stripped + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view field, std::string_view context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError("bad numeric field '" + std::string(field) + "' in " +
                    std::string(context));
  }
  return v;
}

std::vector<CountsRow> read_counts_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  expect_header(line, "t_iso,cum_inflow,cum_outflow", path);
  std::vector<CountsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 3) throw DataError("'" + path.string() + "': bad row '" + line + "'");
    rows.push_back({parse_iso_datetime(f[0]), parse_double(f[1], "cum_inflow"),
                    parse_double(f[2], "cum_outflow")});
  }
  return rows;
}

void write_counts_csv(const std::filesystem::path& path, const SensorDay& day) {
  auto out = open_output(path);
  out << "t_iso,cum_inflow,cum_outflow\n";
  for (std::size_t i = 0; i < day.steps(); ++i) {
    out << format_iso_datetime(day.time_at(i)) << ',' << format_double(day.cum_inflow[i])
        << ',' << format_double(day.cum_outflow[i]) << '\n';
  }
}

std::vector<AfcdRow> read_afcd_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  expect_header(line, "t_iso,segment_index,speed_mps", path);
  std::vector<AfcdRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 3) throw DataError("'" + path.string() + "': bad row '" + line + "'");
    AfcdRow row;
    row.t = parse_iso_datetime(f[0]);
    row.segment_index = static_cast<int>(parse_double(f[1], "segment_index"));
    if (!f[2].empty()) row.speed_mps = parse_double(f[2], "speed_mps");
    rows.push_back(row);
  }
  return rows;
}

void write_afcd_csv(const std::filesystem::path& path, const SensorDay& day) {
  auto out = open_output(path);
  out << "t_iso,segment_index,speed_mps\n";
  const std::size_t intervals = day.afcd_intervals();
  for (std::size_t k = 0; k < intervals; ++k) {
    const std::int64_t t = day.t0 + static_cast<std::int64_t>(k) * kAfcdIntervalSeconds;
    for (std::size_t s = 0; s < day.afcd_speeds.size(); ++s) {
      out << format_iso_datetime(t) << ',' << s << ',';
      if (day.afcd_speeds[s][k].has_value()) out << format_double(*day.afcd_speeds[s][k]);
      out << '\n';
    }
  }
}

AfcdSeries assemble_afcd(const std::vector<AfcdRow>& rows, std::int64_t t0,
                         std::size_t steps) {
  int max_segment = -1;
  for (const auto& r : rows) {
    if (r.segment_index < 0) throw DataError("afcd: negative segment index");
    max_segment = std::max(max_segment, r.segment_index);
  }
  if (max_segment < 0) throw DataError("afcd: no rows");
  const std::size_t intervals = (steps + kStepsPerAfcdInterval - 1) / kStepsPerAfcdInterval;
  AfcdSeries series(static_cast<std::size_t>(max_segment) + 1,
                    std::vector<std::optional<double>>(intervals));
  for (const auto& r : rows) {
    const std::int64_t offset = r.t - t0;
    if (offset < 0 || offset % kAfcdIntervalSeconds != 0) {
      throw DataError("afcd row at " + format_iso_datetime(r.t) +
                      " is not on the 60 s grid starting at " + format_iso_datetime(t0));
    }
    const auto k = static_cast<std::size_t>(offset / kAfcdIntervalSeconds);
    if (k >= intervals) {
      throw DataError("afcd row at " + format_iso_datetime(r.t) +
                      " lies beyond the day horizon");
    }
    series[static_cast<std::size_t>(r.segment_index)][k] = r.speed_mps;
  }
  return series;
}

std::vector<std::pair<std::int64_t, double>> read_truth_csv(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  expect_header(line, "t_iso,queue_m", path);
  std::vector<std::pair<std::int64_t, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 2) throw DataError("'" + path.string() + "': bad row '" + line + "'");
    rows.emplace_back(parse_iso_datetime(f[0]), parse_double(f[1], "queue_m"));
  }
  return rows;
}

void write_truth_csv(const std::filesystem::path& path, const SensorDay& day) {
  if (!day.ground_truth_m) throw DataError("write_truth_csv: day has no ground truth");
  auto out = open_output(path);
  out << "t_iso,queue_m\n";
  for (std::size_t i = 0; i < day.steps(); ++i) {
    out << format_iso_datetime(day.time_at(i)) << ','
        << format_double((*day.ground_truth_m)[i]) << '\n';
  }
}

SensorDay load_sensor_day(const std::filesystem::path& counts_path,
                          const std::filesystem::path& afcd_path,
                          const std::filesystem::path& truth_path) {
  const auto counts = read_counts_csv(counts_path);
  if (counts.size() < 2) throw DataError("'" + counts_path.string() + "': too few rows");

  SensorDay day;
  day.t0 = counts.front().t;
  day.cum_inflow.reserve(counts.size());
  day.cum_outflow.reserve(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].t != day.t0 + static_cast<std::int64_t>(i) * kBaseStepSeconds) {
      throw DataError("'" + counts_path.string() + "': rows are not on a 10 s cadence at " +
                      format_iso_datetime(counts[i].t));
    }
    day.cum_inflow.push_back(counts[i].cum_inflow);
    day.cum_outflow.push_back(counts[i].cum_outflow);
  }

  if (!afcd_path.empty()) {
    day.afcd_speeds = assemble_afcd(read_afcd_csv(afcd_path), day.t0, day.steps());
  }

  if (!truth_path.empty()) {
    const auto rows = read_truth_csv(truth_path);
    if (rows.size() != day.steps()) {
      throw DataError("'" + truth_path.string() + "': row count differs from counts file");
    }
    std::vector<double> truth(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].first != day.time_at(i)) {
        throw DataError("'" + truth_path.string() + "': timestamp mismatch at row " +
                        std::to_string(i));
      }
      truth[i] = rows[i].second;
    }
    day.ground_truth_m = std::move(truth);
  }

  day.validate();
  return day;
}

void write_estimate_csv(const std::filesystem::path& path, const SensorDay& day,
                        const FilterTrace& trace) {
  auto out = open_output(path);
  out << "t_iso,prior_m,posterior_m\n";
  for (std::size_t i = 0; i < trace.posterior_m.size(); ++i) {
    out << format_iso_datetime(day.time_at(i)) << ',' << format_double(trace.prior_m[i])
        << ',' << format_double(trace.posterior_m[i]) << '\n';
  }
}

std::vector<std::pair<std::int64_t, double>> read_estimate_csv(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "' is empty");
  expect_header(line, "t_iso,prior_m,posterior_m", path);
  std::vector<std::pair<std::int64_t, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_line(line);
    if (f.size() != 3) throw DataError("'" + path.string() + "': bad row '" + line + "'");
    rows.emplace_back(parse_iso_datetime(f[0]), parse_double(f[2], "posterior_m"));
  }
  return rows;
}

void write_control_csv(const std::filesystem::path& path, const SensorDay& day,
                       const std::vector<double>& u,
                       const std::vector<double>& q_reconstructed) {
  auto out = open_output(path);
  out << "t_iso,u_m,q_reconstructed_m\n";
  for (std::size_t i = 0; i < u.size(); ++i) {
    out << format_iso_datetime(day.time_at(i)) << ',' << format_double(u[i]) << ','
        << format_double(q_reconstructed[i]) << '\n';
  }
}

SectionConfig load_section_config(const std::filesystem::path& path) {
  auto in = open_input(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
  SectionConfig cfg;
  try {
    cfg.geometry.section_id = j.value("section_id", std::string("section"));
    cfg.geometry.length_m = j.at("length_m").get<double>();
    cfg.geometry.lanes = j.at("lanes").get<int>();
    cfg.geometry.q_max_m = j.at("q_max_m").get<double>();
    const auto bounds = j.at("segment_bounds").get<std::vector<double>>();
    if (bounds.size() < 2) throw DataError("segment_bounds needs at least two entries");
    for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
      cfg.geometry.segments.push_back({bounds[i], bounds[i + 1]});
    }
    if (j.contains("v_free_mps") || j.contains("v_jam_mps")) {
      SpeedRegimes r;
      r.v_free_mps = j.at("v_free_mps").get<double>();
      r.v_jam_mps = j.at("v_jam_mps").get<double>();
      r.validate();
      cfg.regimes = r;
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
  cfg.geometry.validate();
  return cfg;
}

void save_section_config(const std::filesystem::path& path, const SectionConfig& config) {
  nlohmann::json j;
  j["section_id"] = config.geometry.section_id;
  j["length_m"] = config.geometry.length_m;
  j["lanes"] = config.geometry.lanes;
  j["q_max_m"] = config.geometry.q_max_m;
  std::vector<double> bounds;
  bounds.push_back(config.geometry.segments.front().start_m);
  for (const auto& s : config.geometry.segments) bounds.push_back(s.end_m);
  j["segment_bounds"] = bounds;
  if (config.regimes) {
    j["v_free_mps"] = config.regimes->v_free_mps;
    j["v_jam_mps"] = config.regimes->v_jam_mps;
  }
  auto out = open_output(path);
  out << j.dump(2) << '\n';
}

}  // namespace qnet
