#include "hilde/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hilde/io.hpp"

namespace hilde {

void RunConfig::validate() const {
  if (!(alpha1 > 0.0) || !(alpha2 >= 0.0) || !(alpha() < 1.0))
    throw InputError("config: need 0 < alpha1, 0 <= alpha2, alpha1 + alpha2 < 1");
  if (l_max < 1) throw InputError("config: l_max must be >= 1");
  if (!(gamma2 > 0.0)) throw InputError("config: gamma2 must be positive");
  if (replications < 100) throw InputError("config: replications must be >= 100");
  if (oversampling < 1) throw InputError("config: oversampling must be >= 1");
}

FilterKernel RunConfig::make_kernel() const {
  return FilterKernel::make_bessel(filter_order, cutoff_hz, sample_rate_hz, acf_threshold);
}

DeconvConfig RunConfig::deconv_config() const {
  DeconvConfig d;
  d.gamma2 = gamma2;
  d.long_segment_min = long_segment_min;
  d.refinements = refinements;
  d.refinement_factor = refinement_factor;
  return d;
}

std::vector<std::pair<std::string, std::string>> RunConfig::manifest_entries() const {
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("alpha1", format_double(alpha1));
  e.emplace_back("alpha2", format_double(alpha2));
  e.emplace_back("l_max", std::to_string(l_max));
  e.emplace_back("gamma2", format_double(gamma2));
  e.emplace_back("homogeneous", homogeneous ? "1" : "0");
  e.emplace_back("filter_order", std::to_string(filter_order));
  e.emplace_back("cutoff_hz", format_double(cutoff_hz));
  e.emplace_back("sample_rate_hz", format_double(sample_rate_hz));
  e.emplace_back("acf_threshold", format_double(acf_threshold));
  e.emplace_back("replications", std::to_string(replications));
  e.emplace_back("seed", std::to_string(seed));
  e.emplace_back("oversampling", std::to_string(oversampling));
  e.emplace_back("long_segment_min", std::to_string(long_segment_min));
  e.emplace_back("refinements", std::to_string(refinements));
  e.emplace_back("refinement_factor", std::to_string(refinement_factor));
  return e;
}

namespace {

CriticalValues cached_calibration(const RunConfig& cfg, const std::string& key,
                                  const std::function<CriticalValues()>& compute) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.cache_dir);
  const fs::path file = dir / (key + ".txt");
  if (fs::exists(file)) {
    try {
      CriticalValues cv = read_critical_values(file.string());
      if (cv.cache_key() == key) return cv;
      std::cerr << "warning: calibration cache " << file
                << " does not match its key; recomputing\n";
    } catch (const std::exception& e) {
      std::cerr << "warning: unreadable calibration cache " << file << " (" << e.what()
                << "); recomputing\n";
    }
  }
  CriticalValues cv = compute();
  fs::create_directories(dir);
  const fs::path tmp = dir / (key + ".tmp");
  write_critical_values(cv, tmp.string());
  fs::rename(tmp, file);
  return cv;
}

}  // namespace

CriticalValues get_or_calibrate_long(const RunConfig& cfg, const FilterKernel& k, int n) {
  CriticalValues probe;
  probe.family = "jsmurf";
  probe.n = n;
  probe.alpha = cfg.alpha1;
  probe.replications = cfg.replications;
  probe.seed = cfg.seed;
  probe.kernel_fingerprint = k.fingerprint_hex();
  probe.scales = dyadic_scales(n, k.m());
  const std::string key = probe.cache_key();
  return cached_calibration(cfg, key, [&] {
    CriticalValues cv =
        calibrate_jsmurf(n, k, cfg.alpha1, probe.scales, cfg.replications, cfg.seed, cfg.threads);
    return cv;
  });
}

CriticalValues get_or_calibrate_short(const RunConfig& cfg, const FilterKernel& k, int n) {
  CriticalValues probe;
  probe.family = cfg.homogeneous ? "locallr" : "local2p";
  probe.n = n;
  probe.alpha = cfg.alpha2;
  probe.replications = cfg.replications;
  probe.seed = cfg.seed + 1;  // separate stream from the long calibration
  probe.kernel_fingerprint = k.fingerprint_hex();
  probe.scales.resize(cfg.l_max);
  for (int l = 0; l < cfg.l_max; ++l) probe.scales[l] = l + 1;
  const std::string key = probe.cache_key();
  return cached_calibration(cfg, key, [&] {
    LocalTester tester(k, cfg.l_max,
                       cfg.homogeneous ? LocalTestFamily::HomogeneousLR
                                       : LocalTestFamily::TwoParam,
                       1.0);
    return tester.calibrate(n, cfg.alpha2, cfg.replications, cfg.seed + 1, cfg.threads);
  });
}

HildeResult run_hilde(const Trace& tr, const FilterKernel& k, const CriticalValues& q_long,
                      const CriticalValues& q_short, const RunConfig& cfg) {
  cfg.validate();
  HildeResult res;
  res.step_a = fit(tr, k, q_long);

  RefitConfig rcfg;
  rcfg.long_segment_min = cfg.long_segment_min;
  res.refit = refit_long_segments(tr, res.step_a, k, rcfg);

  LocalTester tester(k, cfg.l_max,
                     cfg.homogeneous ? LocalTestFamily::HomogeneousLR
                                     : LocalTestFamily::TwoParam,
                     1.0);
  res.sigma0_sq = 0.0;
  if (cfg.homogeneous) {
    const double sd = difference_sd(tr, k, 1, tr.n());
    if (std::isnan(sd) || !(sd > 0.0))
      throw NumericError("homogeneous mode: global noise sd could not be estimated");
    res.sigma0_sq = sd * sd;
  }
  res.events = tester.scan(tr, res.refit, q_short, cfg.homogeneous ? res.sigma0_sq : 1.0);

  Idealization with_events = apply_events(res.refit, res.events, tr.sample_rate);
  with_events.tests_rejected = static_cast<int>(res.events.size());
  res.idealization = deconvolve(tr, with_events, res.events, k, cfg.deconv_config());
  res.variance = idealize_variance(tr, res.idealization, k, cfg.deconv_config());
  return res;
}

}  // namespace hilde
