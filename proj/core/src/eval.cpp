#include "qnet/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qnet/csv.hpp"

namespace qnet {

std::string_view scope_name(Scope scope) {
  switch (scope) {
    case Scope::all_day: return "all_day";
    case Scope::morning_peak: return "morning_peak";
    case Scope::afternoon_peak: return "afternoon_peak";
  }
  return "?";
}

namespace {

Metrics metrics_over(const std::vector<double>& truth, const std::vector<double>& est,
                     const std::vector<std::size_t>& indices) {
  Metrics m;
  m.samples = indices.size();
  if (indices.empty()) return m;
  double sq = 0.0, abs_sum = 0.0, pct_sum = 0.0;
  std::size_t pct_n = 0;
  for (std::size_t i : indices) {
    const double err = truth[i] - est[i];
    sq += err * err;
    abs_sum += std::abs(err);
    if (truth[i] > kMapeSupportM) {
      pct_sum += std::abs(err) / truth[i];
      ++pct_n;
    }
  }
  const auto n = static_cast<double>(indices.size());
  m.rmse_m = std::sqrt(sq / n);
  m.mae_m = abs_sum / n;
  if (pct_n > 0) m.mape_pct = 100.0 * pct_sum / static_cast<double>(pct_n);
  return m;
}

}  // namespace

MetricsReport compute_metrics(const std::vector<double>& truth_m,
                              const std::vector<double>& estimate_m, std::int64_t t0,
                              int step_s, const PeakWindows& peaks) {
  if (truth_m.size() != estimate_m.size()) {
    throw DataError("compute_metrics: truth and estimate lengths differ");
  }
  std::vector<std::size_t> all, morning, afternoon;
  all.reserve(truth_m.size());
  for (std::size_t i = 0; i < truth_m.size(); ++i) {
    all.push_back(i);
    const int sod = seconds_of_day(t0 + static_cast<std::int64_t>(i) * step_s);
    if (sod >= peaks.morning_begin_s && sod < peaks.morning_end_s) morning.push_back(i);
    if (sod >= peaks.afternoon_begin_s && sod < peaks.afternoon_end_s) {
      afternoon.push_back(i);
    }
  }
  MetricsReport report;
  report.by_scope[Scope::all_day] = metrics_over(truth_m, estimate_m, all);
  report.by_scope[Scope::morning_peak] = metrics_over(truth_m, estimate_m, morning);
  report.by_scope[Scope::afternoon_peak] = metrics_over(truth_m, estimate_m, afternoon);
  return report;
}

Improvement improvement(const Metrics& baseline, const Metrics& method) {
  if (baseline.rmse_m == 0.0 || baseline.mae_m == 0.0) {
    throw NumericError("improvement: zero baseline metric");
  }
  Improvement imp;
  imp.rmse_pct = 100.0 * (baseline.rmse_m - method.rmse_m) / baseline.rmse_m;
  imp.mae_pct = 100.0 * (baseline.mae_m - method.mae_m) / baseline.mae_m;
  if (baseline.mape_pct && method.mape_pct) {
    if (*baseline.mape_pct == 0.0) throw NumericError("improvement: zero baseline MAPE");
    imp.mape_pct = 100.0 * (*baseline.mape_pct - *method.mape_pct) / *baseline.mape_pct;
  }
  return imp;
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, MetricsReport>>& methods) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "method,scope,rmse_m,mae_m,mape_pct\n";
  for (const auto& [name, report] : methods) {
    for (const auto& [scope, metrics] : report.by_scope) {
      out << name << ',' << scope_name(scope) << ',' << format_double(metrics.rmse_m)
          << ',' << format_double(metrics.mae_m) << ',';
      if (metrics.mape_pct) out << format_double(*metrics.mape_pct);
      out << '\n';
    }
  }
}

void write_errors_csv(const std::filesystem::path& path, std::int64_t t0, int step_s,
                      const std::vector<double>& truth_m,
                      const std::vector<std::pair<std::string, std::vector<double>>>& estimates) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "t_iso,method,abs_error_m\n";
  for (const auto& [name, est] : estimates) {
    if (est.size() != truth_m.size()) {
      throw DataError("write_errors_csv: estimate '" + name + "' length mismatch");
    }
    for (std::size_t i = 0; i < est.size(); ++i) {
      out << format_iso_datetime(t0 + static_cast<std::int64_t>(i) * step_s) << ','
          << name << ',' << format_double(std::abs(truth_m[i] - est[i])) << '\n';
    }
  }
}

std::string format_report_table(
    const std::vector<std::pair<std::string, MetricsReport>>& methods) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %-16s %12s %12s %12s\n", "method", "scope",
                "RMSE [m]", "MAE [m]", "MAPE [%]");
  os << line;
  for (const auto& [name, report] : methods) {
    for (const auto& [scope, metrics] : report.by_scope) {
      std::string mape = "n/a";
      if (metrics.mape_pct) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", *metrics.mape_pct);
        mape = buf;
      }
      std::snprintf(line, sizeof(line), "%-12s %-16s %12.2f %12.2f %12s\n", name.c_str(),
                    std::string(scope_name(scope)).c_str(), metrics.rmse_m, metrics.mae_m,
                    mape.c_str());
      os << line;
    }
  }
  return os.str();
}

}  // namespace qnet
