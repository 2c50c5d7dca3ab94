#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qnet/domain.hpp"

namespace qnet {

/// Wall-clock peak windows, seconds of day, [begin, end).
struct PeakWindows {
  int morning_begin_s = 7 * 3600;
  int morning_end_s = 9 * 3600;
  int afternoon_begin_s = 16 * 3600;
  int afternoon_end_s = 18 * 3600;
};

enum class Scope { all_day, morning_peak, afternoon_peak };
std::string_view scope_name(Scope scope);

struct Metrics {
  double rmse_m = 0.0;
  double mae_m = 0.0;
  std::optional<double> mape_pct;  // undefined when no truth sample exceeds 10 m
  std::size_t samples = 0;
};

/// MAPE support threshold: percentage errors only count where truth > 10 m.
inline constexpr double kMapeSupportM = 10.0;

struct MetricsReport {
  std::map<Scope, Metrics> by_scope;
};

/// Standard RMSE/MAE plus MAPE over the >10 m support, sliced all-day and
/// per peak window (wall clock from t0).
MetricsReport compute_metrics(const std::vector<double>& truth_m,
                              const std::vector<double>& estimate_m, std::int64_t t0,
                              int step_s = kBaseStepSeconds, const PeakWindows& peaks = {});

/// 100 * (baseline - method) / baseline, per metric. Zero baseline values
/// are a numeric error; an undefined baseline MAPE leaves the improvement
/// undefined as well.
struct Improvement {
  double rmse_pct = 0.0;
  double mae_pct = 0.0;
  std::optional<double> mape_pct;
};
Improvement improvement(const Metrics& baseline, const Metrics& method);

/// report.csv: method,scope,rmse_m,mae_m,mape_pct (mape empty when undefined).
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, MetricsReport>>& methods);

/// errors.csv: t_iso,method,abs_error_m (long format, box-plot input).
void write_errors_csv(const std::filesystem::path& path, std::int64_t t0, int step_s,
                      const std::vector<double>& truth_m,
                      const std::vector<std::pair<std::string, std::vector<double>>>& estimates);

/// Human-readable fixed-width table of the report.
std::string format_report_table(
    const std::vector<std::pair<std::string, MetricsReport>>& methods);

}  // namespace qnet
