#ifndef HILDE_DETECT_SHORT_HPP
#define HILDE_DETECT_SHORT_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "hilde/bessel_filter.hpp"
#include "hilde/critical_values.hpp"
#include "hilde/types.hpp"

namespace hilde {

/// Local test problem on the event window [tau_left, tau_right]: flanking
/// levels and sds are taken as known (from the refit idealization), the null
/// carries at most one change at tau, the alternative inserts a peak with
/// free level (and sd) on the window.  Observations first_obs..last_obs are
/// the ones whose expectation the window reaches through the filter.
struct LocalHypothesis {
  double tau_left = 0.0;
  double tau_right = 0.0;
  int first_obs = 0;  // 1-based, inclusive
  int last_obs = 0;
  double c_left = 0.0, c_right = 0.0;
  double sd_left = 0.0, sd_right = 0.0;
  bool has_change = false;
  double tau = 0.0;
};

/// One detected short event: the argmax-statistic window of a cluster of
/// intersecting/adjoining rejections.
struct ShortEvent {
  double tau_left = 0.0;   // provisional, on the sample grid
  double tau_right = 0.0;
  double statistic = 0.0;
  double level = 0.0;      // provisional least-squares level of the window
  double sd = 0.0;         // provisional sqrt of the variance estimate
  bool replaces_change = false;
  double replaced_tau = 0.0;
};

/// Hypothesis for the window [i/fs, j/fs] (containing j-i observations
/// strictly inside): none when two or more idealization changes fall into
/// the extended window [(i-m+1)/fs, (j+m-1)/fs].
std::optional<LocalHypothesis> build_hypothesis(const Idealization& ideal, double sample_rate,
                                                int i, int j, int m);

/// Least-squares estimator of the window level under the alternative.
double estimate_c(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k);

/// Weighted variance estimator under the alternative, bias-corrected through
/// the exact quadratic-form constants A and B and truncated at zero.
double estimate_s2(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k,
                   double c_hat);

/// The constants of E[sum w (Y - v c_hat - c_LR)^2] = A s^2 + B(s_L, s_R).
void ab_constants(const LocalHypothesis& hyp, const FilterKernel& k, double& A, double& B);

/// Penalized likelihood-type statistic comparing the null moments against
/// the plug-in alternative moments observation by observation.
double local_stat(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k);

/// Homogeneous-noise likelihood-ratio statistic with Tikhonov-regularized
/// covariance (optional alternative to local_stat).
double lr_stat_homogeneous(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k,
                           double sigma0_sq, double gamma_sq);

/// Difference-based IQR estimator of the noise sd over observations a..b
/// (1-based): robust against missed short events.  Returns NaN when fewer
/// than two lag-m differences are available.
double difference_sd(const Trace& tr, const FilterKernel& k, int a, int b);

struct RefitConfig {
  int long_segment_min = 25;  // samples needed to call a segment long
};

/// Prepares the step-(a) idealization for the local tests: isolated changes
/// are re-located by grid-restricted deconvolution, segment levels are
/// re-estimated by medians and sds by the difference estimator (segments too
/// short inherit the neighbour sd, flagged).
Idealization refit_long_segments(const Trace& tr, const Idealization& ideal,
                                 const FilterKernel& k, const RefitConfig& cfg = {});

enum class LocalTestFamily { TwoParam, HomogeneousLR };

/// Shared machinery for running local tests over all window lengths
/// 1..l_max: per-length filter geometry, Monte-Carlo calibration and the
/// scan over a trace.  Immutable after construction.
class LocalTester {
 public:
  LocalTester(const FilterKernel& k, int l_max,
              LocalTestFamily family = LocalTestFamily::TwoParam,
              double lr_gamma_over_sigma = 1.0);
  ~LocalTester();
  LocalTester(LocalTester&&) noexcept;
  LocalTester& operator=(LocalTester&&) noexcept;

  /// Per-length maxima calibration under the constant-signal filtered noise
  /// null with true hypothesis parameters; quantile-balanced at alpha2 with
  /// uniform weights.
  CriticalValues calibrate(int n, double alpha2, int replications, uint64_t seed,
                           int threads = 0) const;

  /// Evaluates every admissible window, clusters rejections that intersect
  /// or adjoin without an intervening fully-accepted position, and returns
  /// one event per cluster at the argmax statistic.  `sigma0_sq` is only
  /// used by the homogeneous-LR family.
  std::vector<ShortEvent> scan(const Trace& tr, const Idealization& refit_ideal,
                               const CriticalValues& cv, double sigma0_sq = 1.0) const;

  int l_max() const { return l_max_; }
  LocalTestFamily family() const { return family_; }
  const FilterKernel& kernel() const { return *k_; }

  /// Statistic of a single grid window (start i, length len) given the
  /// hypothesis; used by the scan and exposed for tests.
  double window_stat(const Trace& tr, int i, int len, const LocalHypothesis& hyp,
                     double sigma0_sq = 1.0) const;

 private:
  struct Geometry;
  const Geometry& geometry(int len) const;
  double stat_fast(const double* y, int i, int len, double c, double s2) const;
  double stat_fast_lr(const double* y, int i, int len, double c) const;
  void window_estimates(const Trace& tr, int i, int len, const LocalHypothesis& hyp,
                        double& level, double& sd) const;

  const FilterKernel* k_;
  int l_max_;
  int m_;
  LocalTestFamily family_;
  double lr_gamma_over_sigma_;
  std::vector<Geometry> geo_;
};

/// Inserts the detected short events into the refit idealization: each event
/// replaces its single hypothesis change (when present) by a peak at the
/// provisional grid locations.
Idealization apply_events(const Idealization& refit_ideal, const std::vector<ShortEvent>& events,
                          double sample_rate);

}  // namespace hilde

#endif
