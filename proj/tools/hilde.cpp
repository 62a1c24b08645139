// Batch front-end: simulate traces, cache Monte-Carlo calibrations, idealize
// recordings and analyze gating statistics.  Exit codes: 0 success, 2 input
// error, 3 calibration error, 4 numeric failure.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hilde/io.hpp"
#include "hilde/pipeline.hpp"

namespace {

using namespace hilde;

void load_config_file(const std::string& path, std::map<std::string, std::string>& kv) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line without '=': " + line);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
}

// File config first, then command-line overrides on top.
void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* key) { return kv.count(key) ? kv.at(key) : std::string(); };
  auto setd = [&](const char* key, double& dst) {
    if (!get(key).empty()) dst = std::stod(get(key));
  };
  auto seti = [&](const char* key, int& dst) {
    if (!get(key).empty()) dst = std::stoi(get(key));
  };
  setd("alpha1", cfg.alpha1);
  setd("alpha2", cfg.alpha2);
  seti("l_max", cfg.l_max);
  setd("gamma2", cfg.gamma2);
  seti("filter_order", cfg.filter_order);
  setd("cutoff_hz", cfg.cutoff_hz);
  setd("sample_rate_hz", cfg.sample_rate_hz);
  setd("acf_threshold", cfg.acf_threshold);
  seti("replications", cfg.replications);
  if (!get("seed").empty()) cfg.seed = std::stoull(get("seed"));
  seti("oversampling", cfg.oversampling);
  seti("long_segment_min", cfg.long_segment_min);
  seti("refinements", cfg.refinements);
  seti("refinement_factor", cfg.refinement_factor);
  if (!get("cache_dir").empty()) cfg.cache_dir = get("cache_dir");
  seti("threads", cfg.threads);
  if (!get("homogeneous").empty()) cfg.homogeneous = get("homogeneous") == "1";
}

void write_run_manifest(const RunConfig& cfg, const FilterKernel& k, const std::string& out_path,
                        const std::map<std::string, std::string>& extra) {
  std::map<std::string, std::string> m;
  for (const auto& [key, value] : cfg.manifest_entries()) m[key] = value;
  m["kernel_fingerprint"] = k.fingerprint_hex();
  m["kernel_m"] = std::to_string(k.m());
  for (const auto& [key, value] : extra) m[key] = value;
  write_manifest(m, out_path + ".manifest");
}

PiecewiseSignal peak_signal(double length_samples, double s1_sq, double fs, double n) {
  PiecewiseSignal sig;
  sig.change_times.resize(2);
  sig.change_times << 2000.0 / fs, (2000.0 + length_samples) / fs;
  sig.levels.resize(3);
  sig.levels << 0.0, 0.32, 0.0;
  sig.sds.resize(3);
  sig.sds << std::sqrt(6.1e-5), std::sqrt(s1_sq), std::sqrt(6.1e-5);
  sig.end_time = n / fs;
  return sig;
}

PiecewiseSignal two_peaks_signal(double d_samples, double fs, double n) {
  PiecewiseSignal sig;
  sig.change_times.resize(4);
  const double t1 = 2000.0 / fs;
  sig.change_times << t1, t1 + 5.0 / fs, t1 + (5.0 + d_samples) / fs,
      t1 + (10.0 + d_samples) / fs;
  sig.levels.resize(5);
  sig.levels << 0.04, 0.02, 0.04, 0.02, 0.04;  // nS (40/20 pS)
  sig.sds.resize(5);
  sig.sds = Eigen::VectorXd::Constant(5, 0.0014);
  sig.end_time = n / fs;
  return sig;
}

HmmSpec porb_hmm_spec() {
  HmmSpec spec;
  spec.state_means.resize(3);
  spec.state_means << 0.0, 0.0, 0.32;
  spec.state_sds.resize(3);
  spec.state_sds << 0.0078, 0.0078, 0.0316;
  spec.dwell_rates.resize(3);
  spec.dwell_rates << 20.0, 400.0, 7.0;
  spec.transition_probs = Eigen::MatrixXd::Zero(3, 3);
  spec.transition_probs(0, 2) = 1.0;
  spec.transition_probs(1, 2) = 1.0;
  spec.transition_probs(2, 0) = 2.0 / 3.0;
  spec.transition_probs(2, 1) = 1.0 / 3.0;
  return spec;
}

Trace read_trace_any(const std::string& path) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") return read_trace_csv(path);
  return read_trace_binary(path);
}

int run(int argc, char** argv) {
  CLI::App app{"idealization of lowpass-filtered ion channel recordings with open channel noise"};
  app.require_subcommand(1);

  std::string config_path;
  RunConfig cfg;
  double alpha_opt = -1.0, alpha1_opt = -1.0, alpha2_opt = -1.0;
  app.add_option("--config", config_path, "key=value config file");
  app.add_option("--alpha", alpha_opt, "total error level (split 1:4 unless alpha1/2 given)");
  app.add_option("--alpha1", alpha1_opt, "multiresolution error level");
  app.add_option("--alpha2", alpha2_opt, "local test error level");
  app.add_option("--l-max", cfg.l_max, "largest local test scale (samples)");
  app.add_option("--gamma2", cfg.gamma2, "deconvolution regularization");
  app.add_option("--replications", cfg.replications, "Monte-Carlo replications");
  app.add_option("--seed", cfg.seed, "random seed");
  app.add_option("--cache-dir", cfg.cache_dir, "calibration cache directory");
  app.add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
  app.add_option("--sample-rate", cfg.sample_rate_hz, "sampling rate (Hz)");
  app.add_option("--cutoff", cfg.cutoff_hz, "filter cutoff (Hz)");
  app.add_option("--filter-order", cfg.filter_order, "filter pole count");

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a trace from a named preset");
  std::string preset = "peak", sim_out = "trace.csv";
  int sim_n = 4000;
  double peak_len = 2.0, s1_sq = 1e-3, two_peak_d = 20.0, duration = 60.0;
  std::string contamination = "none";
  bool sim_binary = false;
  sim->add_option("--preset", preset, "peak | two-peaks | hmm-porb")
      ->check(CLI::IsMember({"peak", "two-peaks", "hmm-porb"}));
  sim->add_option("--out", sim_out, "output trace path");
  sim->add_flag("--binary", sim_binary, "write raw float64 + sidecar instead of CSV");
  sim->add_option("--n", sim_n, "number of samples (peak presets)");
  sim->add_option("--length", peak_len, "peak length in samples (preset peak)");
  sim->add_option("--s1sq", s1_sq, "peak variance (preset peak)");
  sim->add_option("--d", two_peak_d, "separation in samples (preset two-peaks)");
  sim->add_option("--duration", duration, "trace duration in seconds (preset hmm-porb)");
  sim->add_option("--contamination", contamination, "none | violet | pink")
      ->check(CLI::IsMember({"none", "violet", "pink"}));

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "compute or load the cached critical values");
  int cal_n = 0;
  bool cal_homogeneous = false;
  cal->add_option("--n", cal_n, "trace length to calibrate for")->required();
  cal->add_flag("--homogeneous", cal_homogeneous, "calibrate the homogeneous LR statistic");

  // idealize
  auto* ide = app.add_subcommand("idealize", "run the three-step idealization");
  std::string ide_trace, ide_out = "idealization.json";
  bool ide_homogeneous = false, ide_variance = false, ide_events = false;
  ide->add_option("--trace", ide_trace, "input trace (.csv or binary)")->required();
  ide->add_option("--out", ide_out, "output idealization JSON");
  ide->add_flag("--homogeneous", ide_homogeneous, "use the homogeneous-noise LR local tests");
  ide->add_flag("--variance", ide_variance, "include the variance idealization");
  ide->add_flag("--events", ide_events, "include the detected short events");

  // analyze
  auto* ana = app.add_subcommand("analyze", "gating statistics from an idealization");
  std::string ana_in, ana_prefix = "analysis";
  EventFilter filt;
  double short_min = 1e-4, short_max = 5e-3, long_min = 0.02, long_max = 0.2;
  ana->add_option("--idealization", ana_in, "idealization JSON")->required();
  ana->add_option("--out-prefix", ana_prefix, "output file prefix");
  ana->add_option("--closed-lo", filt.closed_lo, "closed level window, lower (nS)");
  ana->add_option("--closed-hi", filt.closed_hi, "closed level window, upper (nS)");
  ana->add_option("--open-lo", filt.open_lo, "open level window, lower (nS)");
  ana->add_option("--open-hi", filt.open_hi, "open level window, upper (nS)");
  ana->add_option("--amp-lo", filt.amp_lo, "amplitude window, lower (nS)");
  ana->add_option("--amp-hi", filt.amp_hi, "amplitude window, upper (nS)");

  CLI11_PARSE(app, argc, argv);

  if (!config_path.empty()) {
    std::map<std::string, std::string> kv;
    load_config_file(config_path, kv);
    apply_config(cfg, kv);
  }
  // alpha split: explicit alpha1/alpha2 win; a bare --alpha splits 1:4
  if (alpha1_opt >= 0.0) cfg.alpha1 = alpha1_opt;
  if (alpha2_opt >= 0.0) cfg.alpha2 = alpha2_opt;
  if (alpha_opt >= 0.0) {
    if (alpha1_opt >= 0.0 && alpha2_opt >= 0.0) {
      if (std::abs(alpha1_opt + alpha2_opt - alpha_opt) > 1e-12)
        throw InputError("alpha split violates alpha1 + alpha2 = alpha");
    } else if (alpha1_opt < 0.0 && alpha2_opt < 0.0) {
      cfg.alpha1 = alpha_opt / 5.0;
      cfg.alpha2 = alpha_opt - cfg.alpha1;
    } else if (alpha1_opt >= 0.0) {
      cfg.alpha2 = alpha_opt - alpha1_opt;
    } else {
      cfg.alpha1 = alpha_opt - alpha2_opt;
    }
  }
  cfg.validate();

  if (sim->parsed()) {
    const FilterKernel k = cfg.make_kernel();
    const double fs = cfg.sample_rate_hz;
    Trace tr;
    std::map<std::string, std::string> extra;
    extra["preset"] = preset;
    extra["contamination"] = contamination;
    PiecewiseSignal sig;
    int n = sim_n;
    if (preset == "peak") {
      if (n < 1) throw InputError("simulate: zero-duration trace requested");
      sig = peak_signal(peak_len, s1_sq, fs, n);
      extra["peak_length"] = format_double(peak_len);
      extra["s1_sq"] = format_double(s1_sq);
    } else if (preset == "two-peaks") {
      sig = two_peaks_signal(two_peak_d, fs, n);
      extra["d"] = format_double(two_peak_d);
    } else {
      sig = simulate_hmm(porb_hmm_spec(), duration, cfg.seed);
      n = static_cast<int>(std::lround(duration * fs));
      if (n < 1) throw InputError("simulate: zero-duration trace requested");
      extra["duration"] = format_double(duration);
    }
    if (contamination == "none") {
      tr = simulate(sig, k, n, cfg.oversampling, cfg.seed);
    } else {
      ContaminationParams params;
      params.signal = sig;
      params.oversampling = cfg.oversampling;
      if (contamination == "pink") params.pink_sd = 0.5 * std::sqrt(6.1e-5);
      Trace base;
      base.samples.resize(n);
      base.sample_rate = fs;
      tr = add_contamination(base, k,
                             contamination == "violet" ? ContaminationKind::Violet
                                                       : ContaminationKind::Pink,
                             params, cfg.seed);
    }
    if (sim_binary)
      write_trace_binary(tr, sim_out);
    else
      write_trace_csv(tr, sim_out);
    write_run_manifest(cfg, k, sim_out, extra);
    std::cout << "wrote " << sim_out << " (" << tr.n() << " samples)\n";
    return 0;
  }

  if (cal->parsed()) {
    cfg.homogeneous = cal_homogeneous;
    const FilterKernel k = cfg.make_kernel();
    const CriticalValues qa = get_or_calibrate_long(cfg, k, cal_n);
    const CriticalValues qb = get_or_calibrate_short(cfg, k, cal_n);
    std::cout << "long-scale calibration:  " << cfg.cache_dir << "/" << qa.cache_key()
              << ".txt (achieved level " << qa.achieved_level << ")\n";
    std::cout << "short-scale calibration: " << cfg.cache_dir << "/" << qb.cache_key()
              << ".txt (achieved level " << qb.achieved_level << ")\n";
    return 0;
  }

  if (ide->parsed()) {
    cfg.homogeneous = ide_homogeneous;
    const FilterKernel k = cfg.make_kernel();
    Trace tr = read_trace_any(ide_trace);
    if (std::abs(tr.sample_rate - cfg.sample_rate_hz) > 1e-6 * cfg.sample_rate_hz)
      throw InputError("trace sample rate disagrees with the configured filter");
    const CriticalValues qa = get_or_calibrate_long(cfg, k, tr.n());
    const CriticalValues qb = get_or_calibrate_short(cfg, k, tr.n());
    const HildeResult res = run_hilde(tr, k, qa, qb, cfg);
    write_idealization_json(res.idealization, ide_out,
                            ide_variance ? &res.variance : nullptr,
                            ide_events ? &res.events : nullptr);
    std::map<std::string, std::string> extra;
    extra["trace"] = ide_trace;
    extra["trace_provenance"] = tr.provenance;
    extra["calibration_long"] = qa.cache_key();
    extra["calibration_short"] = qb.cache_key();
    extra["changes"] = std::to_string(res.idealization.signal.num_changes());
    write_run_manifest(cfg, k, ide_out, extra);
    std::cout << "wrote " << ide_out << " (" << res.idealization.signal.num_changes()
              << " changes)\n";
    return 0;
  }

  // analyze
  Idealization ideal = read_idealization_json(ana_in);
  const GatingEvents ev = extract_events(ideal, filt);
  {
    std::ofstream out(ana_prefix + "_amplitudes.csv");
    out << "amplitude_nS\n";
    for (double a : ev.amplitudes)
      if (a >= filt.amp_lo && a <= filt.amp_hi) out << format_double(a) << "\n";
  }
  {
    std::ofstream out(ana_prefix + "_dwells_open.csv");
    out << "dwell_s\n";
    for (double d : ev.open_dwells) out << format_double(d) << "\n";
  }
  {
    std::ofstream out(ana_prefix + "_dwells_closed.csv");
    out << "dwell_s\n";
    for (double d : ev.closed_dwells) out << format_double(d) << "\n";
  }

  nlohmann::json summary;
  summary["openings"] = ev.openings;
  summary["closings"] = ev.closings;
  std::vector<double> amps;
  for (double a : ev.amplitudes)
    if (a >= filt.amp_lo && a <= filt.amp_hi) amps.push_back(a);
  if (!amps.empty()) summary["amplitude_mode_nS"] = half_sample_mode(amps);

  auto fit_block = [&](const std::vector<double>& dwells, double lo, double hi,
                       const char* name) {
    const auto windowed = filter_window(dwells, lo, hi);
    nlohmann::json block;
    block["count"] = windowed.size();
    block["window_s"] = {lo, hi};
    if (windowed.size() >= 2) {
      try {
        const double rate = fit_exponential_truncated(windowed, lo, hi);
        block["rate_hz"] = rate;
        block["rate_se_hz"] = rate_standard_error(windowed, lo, hi, rate);
      } catch (const NumericError& e) {
        block["error"] = e.what();
      }
    } else {
      block["error"] = "not enough events";
    }
    summary[name] = block;
    return block;
  };
  fit_block(ev.open_dwells, filt.dwell_min, filt.dwell_max, "open");
  const auto bs = fit_block(ev.closed_dwells, short_min, short_max, "closed_short");
  const auto bl = fit_block(ev.closed_dwells, long_min, long_max, "closed_long");
  if (bs.contains("rate_hz") && bl.contains("rate_hz")) {
    summary["short_event_proportion"] = event_proportions(
        bs["count"].get<long>(), bl["count"].get<long>(), bs["rate_hz"].get<double>(),
        bl["rate_hz"].get<double>(), short_min, short_max, long_min, long_max);
  }
  {
    std::ofstream out(ana_prefix + "_summary.json");
    out << summary.dump(1) << "\n";
  }
  std::cout << "wrote " << ana_prefix << "_summary.json (" << ev.openings << " openings)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hilde::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const hilde::CalibrationError& e) {
    std::cerr << "calibration error: " << e.what() << "\n";
    return 3;
  } catch (const hilde::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
