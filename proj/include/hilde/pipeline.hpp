#ifndef HILDE_PIPELINE_HPP
#define HILDE_PIPELINE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hilde/analysis.hpp"
#include "hilde/bessel_filter.hpp"
#include "hilde/critical_values.hpp"
#include "hilde/deconv.hpp"
#include "hilde/detect_long.hpp"
#include "hilde/detect_short.hpp"
#include "hilde/model.hpp"
#include "hilde/types.hpp"

namespace hilde {

struct RunConfig {
  // error levels: alpha = alpha1 + alpha2
  double alpha1 = 0.01;
  double alpha2 = 0.04;
  int l_max = 65;
  double gamma2 = 1.0;
  bool homogeneous = false;  // switch the local tests to the LR statistic

  // filter
  int filter_order = 4;
  double cutoff_hz = 1000.0;
  double sample_rate_hz = 10000.0;
  double acf_threshold = 1e-3;

  // Monte-Carlo calibration
  int replications = 10000;
  uint64_t seed = 20230707;

  // simulation
  int oversampling = 100;

  // deconvolution
  int long_segment_min = 25;
  int refinements = 2;
  int refinement_factor = 10;

  std::string cache_dir = "calib_cache";
  int threads = 0;  // 0 -> hardware concurrency

  double alpha() const { return alpha1 + alpha2; }
  void validate() const;
  FilterKernel make_kernel() const;
  DeconvConfig deconv_config() const;
  std::vector<std::pair<std::string, std::string>> manifest_entries() const;
};

/// Loads the calibration from the cache directory or computes and stores it.
/// Mismatching cached contents are recomputed with a warning on stderr.
CriticalValues get_or_calibrate_long(const RunConfig& cfg, const FilterKernel& k, int n);
CriticalValues get_or_calibrate_short(const RunConfig& cfg, const FilterKernel& k, int n);

struct HildeResult {
  Idealization step_a;        // multiresolution detection
  Idealization refit;         // hypothesis idealization for the local tests
  std::vector<ShortEvent> events;
  Idealization idealization;  // final, deconvolved
  PiecewiseSignal variance;   // variance idealization
  double sigma0_sq = 0.0;     // homogeneous pre-estimate (LR statistic only)
};

/// The full pipeline: (a) multiresolution detection, (b) local tests,
/// (c) local deconvolution.
HildeResult run_hilde(const Trace& tr, const FilterKernel& k, const CriticalValues& q_long,
                      const CriticalValues& q_short, const RunConfig& cfg);

}  // namespace hilde

#endif
