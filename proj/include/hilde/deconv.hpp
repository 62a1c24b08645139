#ifndef HILDE_DECONV_HPP
#define HILDE_DECONV_HPP

#include <vector>

#include "hilde/bessel_filter.hpp"
#include "hilde/detect_short.hpp"
#include "hilde/types.hpp"

namespace hilde {

struct DeconvConfig {
  double gamma2 = 1.0;        // Tikhonov regularization of the correlation matrix
  int long_segment_min = 25;  // samples a segment needs to act as a flank
  int refinements = 2;
  int refinement_factor = 10;
};

/// Iterative grid search minimizing the Mahalanobis norm of local residuals
/// against the convolved candidate under the regularized homogeneous noise
/// correlation.  The observation window is pinned to the coarse search grid
/// so objective values are comparable across refinement rounds.
class LocalDeconvolver {
 public:
  LocalDeconvolver(const FilterKernel& k, const DeconvConfig& cfg);

  /// Single change between fixed levels, searched on [grid_lo, grid_hi]
  /// (clipped against neighbouring changes at clip_lo/clip_hi), initial
  /// spacing 1/fs, then `refinements` rounds shrinking the spacing by
  /// `refinement_factor`.
  double refine_change(const Trace& tr, double tau_hat, double c_left, double c_right,
                       double grid_lo, double grid_hi, double clip_lo, double clip_hi,
                       int refinements) const;

  struct PeakFit {
    double tau_left = 0.0;
    double tau_right = 0.0;
    double level = 0.0;
    bool ok = false;
  };

  /// Joint search over both peak boundaries with the level profiled out in
  /// closed form; the inner boundary keeps at least the final grid
  /// resolution of separation.
  PeakFit refine_peak(const Trace& tr, double tau_l_hat, double tau_r_hat, double grid_l_lo,
                      double grid_l_hi, double grid_r_lo, double grid_r_hi, double c_left,
                      double c_right, double clip_lo, double clip_hi) const;

  const DeconvConfig& config() const { return cfg_; }

 private:
  struct Window {
    int first = 0, last = 0;  // 1-based observation range
    Eigen::MatrixXd minv;     // (R + gamma^2 I)^{-1} on the window
  };
  Window make_window(const Trace& tr, double lo_time, double hi_time) const;
  double final_spacing() const;

  const FilterKernel* k_;
  DeconvConfig cfg_;
};

/// Step (c): refines every isolated change and every detected peak below the
/// sampling grid, re-estimates long-segment levels (interior means) and all
/// segment sds.  Events without two long flanking segments are left at grid
/// resolution with their `deconvolved` flags unset.
Idealization deconvolve(const Trace& tr, const Idealization& ideal,
                        const std::vector<ShortEvent>& events, const FilterKernel& k,
                        const DeconvConfig& cfg);

/// Variance idealization: change times copied from the conductance
/// idealization, long-segment variances from the difference estimator,
/// short-segment variances from the local weighted estimator.
PiecewiseSignal idealize_variance(const Trace& tr, const Idealization& ideal,
                                  const FilterKernel& k,
                                  const DeconvConfig& cfg = DeconvConfig{});

}  // namespace hilde

#endif
