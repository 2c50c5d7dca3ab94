#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

// CSV files are UTF-8 with a header row and dot decimal separators.
// Numbers are written with shortest round-trip formatting so that a
// write/read cycle reproduces doubles bit-exactly.

std::string format_double(double v);
double parse_double(std::string_view field, std::string_view context);

struct CountsRow {
  std::int64_t t = 0;
  double cum_inflow = 0.0;
  double cum_outflow = 0.0;
};

struct AfcdRow {
  std::int64_t t = 0;
  int segment_index = 0;
  std::optional<double> speed_mps;
};

// counts.csv: t_iso,cum_inflow,cum_outflow
std::vector<CountsRow> read_counts_csv(const std::filesystem::path& path);
void write_counts_csv(const std::filesystem::path& path, const SensorDay& day);

// afcd.csv: t_iso,segment_index,speed_mps ("" when missing)
std::vector<AfcdRow> read_afcd_csv(const std::filesystem::path& path);
void write_afcd_csv(const std::filesystem::path& path, const SensorDay& day);

/// Pivots aFCD rows into the [segment][interval] matrix covering `steps`
/// base steps from t0; absent rows stay missing.
AfcdSeries assemble_afcd(const std::vector<AfcdRow>& rows, std::int64_t t0,
                         std::size_t steps);

// truth.csv: t_iso,queue_m
std::vector<std::pair<std::int64_t, double>> read_truth_csv(const std::filesystem::path& path);
void write_truth_csv(const std::filesystem::path& path, const SensorDay& day);

/// Assembles a SensorDay from counts plus optional aFCD/truth files,
/// validating cadence and cross-file alignment.
SensorDay load_sensor_day(const std::filesystem::path& counts_path,
                          const std::filesystem::path& afcd_path = {},
                          const std::filesystem::path& truth_path = {});

// estimate.csv: t_iso,prior_m,posterior_m
void write_estimate_csv(const std::filesystem::path& path, const SensorDay& day,
                        const FilterTrace& trace);
std::vector<std::pair<std::int64_t, double>> read_estimate_csv(
    const std::filesystem::path& path);

// control.csv: t_iso,u_m,q_reconstructed_m
void write_control_csv(const std::filesystem::path& path, const SensorDay& day,
                       const std::vector<double>& u,
                       const std::vector<double>& q_reconstructed);

// Section config: JSON with length_m, lanes, q_max_m, segment boundary list
// and optional v_free_mps / v_jam_mps overrides.
struct SectionConfig {
  SectionGeometry geometry;
  std::optional<SpeedRegimes> regimes;
};
SectionConfig load_section_config(const std::filesystem::path& path);
void save_section_config(const std::filesystem::path& path, const SectionConfig& config);

}  // namespace qnet
