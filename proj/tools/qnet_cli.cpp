// qnet: queue-length estimation from loop-detector counts and aFCD speeds.
//
// Subcommands: simulate, fit-regimes, derive-control, train, estimate,
// evaluate, realtime. Exit codes: 0 success, 2 usage, 3 data error,
// 4 numeric error.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qnet/baselines.hpp"
#include "qnet/csv.hpp"
#include "qnet/eval.hpp"
#include "qnet/filter.hpp"
#include "qnet/simulator.hpp"
#include "qnet/training.hpp"

namespace {

using namespace qnet;

// --- shared helpers ---------------------------------------------------------

BandPass parse_band(const std::string& spec) {
  const auto comma = spec.find(',');
  if (comma == std::string::npos) {
    throw DataError("--band expects 'low_hz,high_hz', got '" + spec + "'");
  }
  BandPass band;
  band.low_hz = parse_double(spec.substr(0, comma), "--band low cutoff");
  band.high_hz = parse_double(spec.substr(comma + 1), "--band high cutoff");
  band.validate();
  return band;
}

int parse_clock(const std::string& hhmm) {
  if (hhmm.size() != 5 || hhmm[2] != ':') {
    throw DataError("expected HH:MM, got '" + hhmm + "'");
  }
  const int h = static_cast<int>(parse_double(hhmm.substr(0, 2), "hour"));
  const int m = static_cast<int>(parse_double(hhmm.substr(3, 2), "minute"));
  return h * 3600 + m * 60;
}

void parse_peak(const std::string& spec, int& begin_s, int& end_s) {
  const auto dash = spec.find('-');
  if (dash == std::string::npos) {
    throw DataError("peak window expects 'HH:MM-HH:MM', got '" + spec + "'");
  }
  begin_s = parse_clock(spec.substr(0, dash));
  end_s = parse_clock(spec.substr(dash + 1));
}

SpeedRegimes regimes_for(const SectionConfig& section, const SensorDay& day) {
  if (section.regimes) return *section.regimes;
  std::vector<double> samples;
  for (const auto& seg : day.afcd_speeds) {
    for (const auto& v : seg) {
      if (v) samples.push_back(*v);
    }
  }
  return estimate_regimes(samples);
}

struct EstimateFlags {
  std::string counts, afcd, section, checkpoint, out, trace;
  std::string variant = "qnet";
  std::string control_mode = "offline";
  std::string band;
  std::size_t lambda_window = 180;
  double ekf_q = 4.0, ekf_r = 1.0, ekf_sigma0 = 100.0;
};

void write_trace_csv(const std::filesystem::path& path, const SensorDay& day,
                     const FilterTrace& trace) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "t_iso,prior_m,posterior_m,predicted_speeds_mps,gains\n";
  for (std::size_t t = 0; t < trace.posterior_m.size(); ++t) {
    out << format_iso_datetime(day.time_at(t)) << ',' << format_double(trace.prior_m[t])
        << ',' << format_double(trace.posterior_m[t]) << ',';
    for (std::size_t s = 0; s < trace.predicted_speeds[t].size(); ++s) {
      if (s) out << ';';
      out << format_double(trace.predicted_speeds[t][s]);
    }
    out << ',';
    for (std::size_t g = 0; g < trace.gains[t].size(); ++g) {
      if (g) out << '|';
      for (std::size_t i = 0; i < trace.gains[t][g].size(); ++i) {
        if (i) out << ';';
        out << format_double(trace.gains[t][g][i]);
      }
    }
    out << '\n';
  }
}

// --- subcommands -------------------------------------------------------------

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir) {
  const auto scenario = load_scenario(scenario_path);
  const auto sim = simulate_day(scenario);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_counts_csv(dir / "counts.csv", sim.day);
  write_afcd_csv(dir / "afcd.csv", sim.day);
  write_truth_csv(dir / "truth.csv", sim.day);
  save_scenario(dir / "scenario_echo.json", scenario);
  SectionConfig section{scenario.geometry, scenario.regimes};
  save_section_config(dir / "section.json", section);
  std::cout << "simulated " << sim.day.steps() << " steps -> " << dir.string() << "\n";
  return 0;
}

int cmd_fit_regimes(const std::string& afcd_path, const std::string& histogram,
                    double bin_width, double separation) {
  const auto rows = read_afcd_csv(afcd_path);
  std::vector<double> samples;
  for (const auto& r : rows) {
    if (r.speed_mps) samples.push_back(*r.speed_mps);
  }
  RegimeEstimationOptions options;
  options.bin_width_mps = bin_width;
  options.min_mode_separation_mps = separation;
  options.histogram_csv = histogram;
  const auto regimes = estimate_regimes(samples, options);
  std::cout << "v_jam_mps=" << format_double(regimes.v_jam_mps) << "\n"
            << "v_free_mps=" << format_double(regimes.v_free_mps) << "\n";
  return 0;
}

int cmd_derive_control(const std::string& counts_path, const std::string& section_path,
                       const std::string& out_path, const std::string& mode,
                       const std::string& band_spec, std::size_t lambda_window) {
  const auto section = load_section_config(section_path);
  const auto day = load_sensor_day(counts_path);
  BandPass band;
  if (!band_spec.empty()) band = parse_band(band_spec);
  const auto control_mode =
      mode == "online" ? ControlMode::online : ControlMode::offline;
  if (mode != "online" && mode != "offline") {
    throw DataError("--mode must be offline or online, got '" + mode + "'");
  }
  const auto series =
      derive_control(day, section.geometry, control_mode, band, lambda_window);
  write_control_csv(out_path, day, series.u, series.reconstructed_q);
  std::cout << "wrote " << series.u.size() << " control steps -> " << out_path << "\n";
  return 0;
}

struct ManifestEntry {
  std::filesystem::path counts, afcd, truth;
};

struct Manifest {
  std::filesystem::path section;
  std::vector<ManifestEntry> train, validation, test;
};

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
  const auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  Manifest m;
  try {
    m.section = resolve(j.at("section").get<std::string>());
    auto read_list = [&](const char* key, std::vector<ManifestEntry>& out) {
      if (!j.contains(key)) return;
      for (const auto& item : j.at(key)) {
        ManifestEntry e;
        e.counts = resolve(item.at("counts").get<std::string>());
        e.afcd = resolve(item.at("afcd").get<std::string>());
        if (item.contains("truth")) e.truth = resolve(item.at("truth").get<std::string>());
        out.push_back(std::move(e));
      }
    };
    read_list("train", m.train);
    read_list("validation", m.validation);
    read_list("test", m.test);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest '" + path.string() + "': " + e.what());
  }
  return m;
}

int cmd_train(const std::string& manifest_path, const std::string& out_dir,
              std::size_t window, double lr, int epochs, int patience,
              std::uint64_t seed, const std::string& band_spec) {
  const auto manifest = load_manifest(manifest_path);
  if (manifest.train.empty()) throw DataError("manifest has no training days");
  const auto section = load_section_config(manifest.section);

  auto load_days = [](const std::vector<ManifestEntry>& entries) {
    std::vector<SensorDay> days;
    for (const auto& e : entries) {
      if (e.truth.empty()) throw DataError("training/validation days need truth files");
      days.push_back(load_sensor_day(e.counts, e.afcd, e.truth));
    }
    return days;
  };
  const auto train_days = load_days(manifest.train);
  const auto val_days = load_days(manifest.validation);

  MeasurementModel model{section.geometry, regimes_for(section, train_days.front())};

  TrainConfig config;
  config.window_steps = window;
  config.lr = lr;
  config.epochs = epochs;
  config.patience = patience;
  config.seed = seed;
  if (!band_spec.empty()) config.bandpass = parse_band(band_spec);

  const auto result = train(train_days, val_days, model, GainNetConfig{}, config);

  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "checkpoint.json", result.config, result.store);
  {
    std::ofstream metrics(dir / "metrics.csv");
    metrics << "epoch,train_rmse,val_rmse\n";
    for (const auto& e : result.curve) {
      metrics << e.epoch << ',' << format_double(e.train_rmse) << ','
              << format_double(e.val_rmse) << '\n';
    }
  }
  std::cout << "trained " << result.curve.size() << " epochs, best epoch "
            << result.best_epoch << " (val RMSE " << result.best_val_rmse << " m) -> "
            << (dir / "checkpoint.json").string() << "\n";
  if (result.aborted_on_divergence) {
    std::cout << "warning: training aborted on divergence; checkpoint holds the last"
                 " good parameters\n";
  }
  return 0;
}

int cmd_estimate(const EstimateFlags& flags) {
  const auto section = load_section_config(flags.section);
  const auto day = load_sensor_day(flags.counts, flags.afcd);
  const MeasurementModel model{section.geometry, regimes_for(section, day)};

  RunDayOptions options;
  options.variant = parse_variant(flags.variant);
  options.ekf = EkfParams{flags.ekf_q, flags.ekf_r, flags.ekf_sigma0};
  if (!flags.band.empty()) options.bandpass = parse_band(flags.band);
  options.lambda_window_steps = flags.lambda_window;

  Checkpoint checkpoint;
  if (options.variant != FilterVariant::qekf) {
    if (flags.checkpoint.empty()) {
      throw DataError("variant '" + flags.variant + "' needs --checkpoint");
    }
    checkpoint = load_checkpoint(flags.checkpoint);
    options.store = &checkpoint.store;
    options.net = &checkpoint.net;
  }

  FilterTrace trace;
  if (flags.control_mode == "online") {
    trace = run_day_online(day, model, options);
  } else if (flags.control_mode == "offline") {
    trace = run_day(day, model, options);
  } else {
    throw DataError("--control-mode must be offline or online");
  }

  write_estimate_csv(flags.out, day, trace);
  if (!flags.trace.empty()) write_trace_csv(flags.trace, day, trace);
  std::cout << "estimated " << trace.posterior_m.size() << " steps (" << flags.variant
            << ", " << flags.control_mode << " control) -> " << flags.out << "\n";
  return 0;
}

int cmd_evaluate(const std::string& truth_path, const std::string& estimate_path,
                 bool baselines, const std::string& afcd_path,
                 const std::string& section_path, const std::string& report_path,
                 const std::string& errors_path, const std::string& morning,
                 const std::string& afternoon, const std::string& method_name) {
  const auto truth_rows = read_truth_csv(truth_path);
  if (truth_rows.empty()) throw DataError("truth file has no rows");
  std::vector<double> truth(truth_rows.size());
  for (std::size_t i = 0; i < truth_rows.size(); ++i) truth[i] = truth_rows[i].second;
  const std::int64_t t0 = truth_rows.front().first;

  const auto est_rows = read_estimate_csv(estimate_path);
  if (est_rows.size() != truth.size()) {
    throw DataError("estimate and truth files have different row counts");
  }
  std::vector<double> estimate(est_rows.size());
  for (std::size_t i = 0; i < est_rows.size(); ++i) estimate[i] = est_rows[i].second;

  PeakWindows peaks;
  if (!morning.empty()) parse_peak(morning, peaks.morning_begin_s, peaks.morning_end_s);
  if (!afternoon.empty()) {
    parse_peak(afternoon, peaks.afternoon_begin_s, peaks.afternoon_end_s);
  }

  std::vector<std::pair<std::string, MetricsReport>> methods;
  std::vector<std::pair<std::string, std::vector<double>>> estimates;
  methods.emplace_back(method_name,
                       compute_metrics(truth, estimate, t0, kBaseStepSeconds, peaks));
  estimates.emplace_back(method_name, estimate);

  if (baselines) {
    if (afcd_path.empty() || section_path.empty()) {
      throw DataError("--baselines needs --afcd and --section");
    }
    const auto section = load_section_config(section_path);
    const auto matrix =
        impute_missing(assemble_afcd(read_afcd_csv(afcd_path), t0, truth.size()));
    const auto osd =
        osd_series(expand_afcd(matrix, truth.size()), section.geometry);
    const auto isc = isc_estimate(matrix, section.geometry, truth.size());
    methods.emplace_back("osd", compute_metrics(truth, osd, t0, kBaseStepSeconds, peaks));
    methods.emplace_back("isc", compute_metrics(truth, isc, t0, kBaseStepSeconds, peaks));
    estimates.emplace_back("osd", osd);
    estimates.emplace_back("isc", isc);

    // Improvement of the estimate over the best baseline, per scope (the
    // best baseline is picked per metric).
    MetricsReport improvement_report;
    for (const auto scope : {Scope::all_day, Scope::morning_peak, Scope::afternoon_peak}) {
      const auto& m_est = methods[0].second.by_scope.at(scope);
      const auto& m_osd = methods[1].second.by_scope.at(scope);
      const auto& m_isc = methods[2].second.by_scope.at(scope);
      Metrics best;
      best.rmse_m = std::min(m_osd.rmse_m, m_isc.rmse_m);
      best.mae_m = std::min(m_osd.mae_m, m_isc.mae_m);
      if (m_osd.mape_pct && m_isc.mape_pct) {
        best.mape_pct = std::min(*m_osd.mape_pct, *m_isc.mape_pct);
      }
      const auto imp = improvement(best, m_est);
      Metrics as_metrics;
      as_metrics.rmse_m = imp.rmse_pct;
      as_metrics.mae_m = imp.mae_pct;
      as_metrics.mape_pct = imp.mape_pct;
      improvement_report.by_scope[scope] = as_metrics;
    }
    methods.emplace_back("improvement_pct", improvement_report);
  }

  write_report_csv(report_path, methods);
  if (!errors_path.empty()) {
    write_errors_csv(errors_path, t0, kBaseStepSeconds, truth, estimates);
  }
  std::cout << format_report_table(methods);
  return 0;
}

int cmd_realtime(const EstimateFlags& flags) {
  const auto section = load_section_config(flags.section);
  const auto counts = read_counts_csv(flags.counts);
  if (counts.size() < 2) throw DataError("counts file too short");
  auto afcd_rows = read_afcd_csv(flags.afcd);

  // Regimes must come from the section config here: fitting them from the
  // full day would read ahead.
  if (!section.regimes) {
    throw DataError("realtime needs v_free_mps/v_jam_mps in the section config");
  }
  const MeasurementModel model{section.geometry, *section.regimes};

  FilterVariant variant = parse_variant(flags.variant);
  EkfParams ekf{flags.ekf_q, flags.ekf_r, flags.ekf_sigma0};
  BandPass band;
  if (!flags.band.empty()) band = parse_band(flags.band);

  Checkpoint checkpoint;
  const ParameterStore* store = nullptr;
  const GainNet* net = nullptr;
  if (variant != FilterVariant::qekf) {
    if (flags.checkpoint.empty()) {
      throw DataError("variant '" + flags.variant + "' needs --checkpoint");
    }
    checkpoint = load_checkpoint(flags.checkpoint);
    store = &checkpoint.store;
    net = &checkpoint.net;
  }

  OnlineEstimator estimator(model, variant, store, net, ekf, band, flags.lambda_window);

  std::ofstream out(flags.out);
  if (!out) throw DataError("cannot write '" + flags.out + "'");
  out << "t_iso,prior_m,posterior_m\n";

  // Feed rows in arrival order: aFCD rows stamped at or before a counts row
  // are consumed first, then the counts row advances one 10 s step.
  std::size_t next_afcd = 0;
  for (const auto& row : counts) {
    while (next_afcd < afcd_rows.size() && afcd_rows[next_afcd].t <= row.t) {
      const auto& a = afcd_rows[next_afcd];
      estimator.push_afcd(static_cast<std::size_t>(a.segment_index), a.speed_mps);
      ++next_afcd;
    }
    const auto step = estimator.push_counts(row.cum_inflow, row.cum_outflow);
    const std::string line = format_iso_datetime(row.t) + "," +
                             format_double(step.prior) + "," +
                             format_double(step.posterior);
    out << line << '\n';
    std::cout << line << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"queue-length estimation from loop detector counts and aFCD speeds"};
  app.require_subcommand(1);

  // simulate
  std::string scenario_path, out_dir;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic day");
  simulate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  simulate->add_option("--out", out_dir, "output directory")->required();

  // fit-regimes
  std::string afcd_path, histogram_path;
  double bin_width = 1.0, separation = 3.0;
  auto* fit = app.add_subcommand("fit-regimes", "estimate v_jam/v_free from aFCD");
  fit->add_option("--afcd", afcd_path, "afcd.csv")->required();
  fit->add_option("--histogram", histogram_path, "write the speed histogram CSV");
  fit->add_option("--bin-width", bin_width, "histogram bin width, m/s");
  fit->add_option("--separation", separation, "minimum mode separation, m/s");

  // derive-control
  std::string dc_counts, dc_section, dc_out, dc_mode = "offline", dc_band;
  std::size_t dc_lambda_window = 180;
  auto* derive = app.add_subcommand("derive-control", "queue-change control input");
  derive->add_option("--counts", dc_counts, "counts.csv")->required();
  derive->add_option("--section", dc_section, "section config JSON")->required();
  derive->add_option("--out", dc_out, "control.csv")->required();
  derive->add_option("--mode", dc_mode, "offline|online");
  derive->add_option("--band", dc_band, "low_hz,high_hz");
  derive->add_option("--lambda-window", dc_lambda_window, "boundary window steps");

  // train
  std::string manifest_path, train_out;
  std::size_t window = 60;
  double lr = 0.001;
  int epochs = 50, patience = 10;
  std::uint64_t seed = 7;
  std::string train_band;
  auto* train_cmd = app.add_subcommand("train", "train the gain network");
  train_cmd->add_option("--manifest", manifest_path, "manifest JSON")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();
  train_cmd->add_option("--window", window, "window length in 10 s steps");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--epochs", epochs, "epoch budget");
  train_cmd->add_option("--patience", patience, "early stopping patience");
  train_cmd->add_option("--seed", seed, "initialization seed");
  train_cmd->add_option("--band", train_band, "low_hz,high_hz");

  // estimate
  EstimateFlags est;
  auto* estimate = app.add_subcommand("estimate", "run the filter over a day");
  estimate->add_option("--counts", est.counts, "counts.csv")->required();
  estimate->add_option("--afcd", est.afcd, "afcd.csv")->required();
  estimate->add_option("--section", est.section, "section config JSON")->required();
  estimate->add_option("--checkpoint", est.checkpoint, "gain network checkpoint");
  estimate->add_option("--variant", est.variant, "qnet|qnet_no_u|qekf");
  estimate->add_option("--control-mode", est.control_mode, "offline|online");
  estimate->add_option("--band", est.band, "low_hz,high_hz");
  estimate->add_option("--lambda-window", est.lambda_window, "boundary window steps");
  estimate->add_option("--ekf-q", est.ekf_q, "EKF process variance, m^2");
  estimate->add_option("--ekf-r", est.ekf_r, "EKF measurement variance, (m/s)^2");
  estimate->add_option("--ekf-sigma0", est.ekf_sigma0, "EKF initial variance, m^2");
  estimate->add_option("--out", est.out, "estimate.csv")->required();
  estimate->add_option("--trace", est.trace, "full trace CSV");

  // evaluate
  std::string ev_truth, ev_estimate, ev_afcd, ev_section, ev_report, ev_errors;
  std::string ev_morning, ev_afternoon, ev_method = "estimate";
  bool ev_baselines = false;
  auto* evaluate = app.add_subcommand("evaluate", "metrics report");
  evaluate->add_option("--truth", ev_truth, "truth.csv")->required();
  evaluate->add_option("--estimate", ev_estimate, "estimate.csv")->required();
  evaluate->add_flag("--baselines", ev_baselines, "include OSD/ISC columns");
  evaluate->add_option("--afcd", ev_afcd, "afcd.csv (for baselines)");
  evaluate->add_option("--section", ev_section, "section config (for baselines)");
  evaluate->add_option("--report", ev_report, "report CSV")->required();
  evaluate->add_option("--errors", ev_errors, "per-step absolute error CSV");
  evaluate->add_option("--morning", ev_morning, "morning peak HH:MM-HH:MM");
  evaluate->add_option("--afternoon", ev_afternoon, "afternoon peak HH:MM-HH:MM");
  evaluate->add_option("--method-name", ev_method, "label for the estimate column");

  // realtime
  EstimateFlags rt;
  auto* realtime = app.add_subcommand("realtime", "streaming estimation, causal");
  realtime->add_option("--counts", rt.counts, "counts.csv")->required();
  realtime->add_option("--afcd", rt.afcd, "afcd.csv")->required();
  realtime->add_option("--section", rt.section, "section config JSON")->required();
  realtime->add_option("--checkpoint", rt.checkpoint, "gain network checkpoint");
  realtime->add_option("--variant", rt.variant, "qnet|qnet_no_u|qekf");
  realtime->add_option("--band", rt.band, "low_hz,high_hz");
  realtime->add_option("--lambda-window", rt.lambda_window, "boundary window steps");
  realtime->add_option("--ekf-q", rt.ekf_q, "EKF process variance, m^2");
  realtime->add_option("--ekf-r", rt.ekf_r, "EKF measurement variance, (m/s)^2");
  realtime->add_option("--ekf-sigma0", rt.ekf_sigma0, "EKF initial variance, m^2");
  realtime->add_option("--out", rt.out, "estimate.csv")->required();

  try {
    app.parse(argc, argv);
    if (*simulate) return cmd_simulate(scenario_path, out_dir);
    if (*fit) return cmd_fit_regimes(afcd_path, histogram_path, bin_width, separation);
    if (*derive) {
      return cmd_derive_control(dc_counts, dc_section, dc_out, dc_mode, dc_band,
                                dc_lambda_window);
    }
    if (*train_cmd) {
      return cmd_train(manifest_path, train_out, window, lr, epochs, patience, seed,
                       train_band);
    }
    if (*estimate) return cmd_estimate(est);
    if (*evaluate) {
      return cmd_evaluate(ev_truth, ev_estimate, ev_baselines, ev_afcd, ev_section,
                          ev_report, ev_errors, ev_morning, ev_afternoon, ev_method);
    }
    if (*realtime) return cmd_realtime(rt);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
