#ifndef HILDE_ANALYSIS_HPP
#define HILDE_ANALYSIS_HPP

#include <vector>

#include "hilde/types.hpp"

namespace hilde {

/// Robust mode: iteratively keep the shortest half (ceil(k/2) consecutive
/// sorted values, leftmost on ties) until at most two values remain, then
/// average them.
double half_sample_mode(std::vector<double> values);

/// Level windows classifying segments as open/closed (anything else is an
/// artifact) plus the amplitude and dwell windows used by the rate fits.
struct EventFilter {
  double closed_lo = -0.05, closed_hi = 0.05;  // nS
  double open_lo = 0.15, open_hi = 2.0;        // nS
  double amp_lo = 0.2, amp_hi = 0.5;           // nS
  double dwell_min = 1e-4, dwell_max = 0.2;    // s, global window
};

struct GatingEvents {
  std::vector<double> open_dwells;    // seconds, merged over artifacts
  std::vector<double> closed_dwells;  // seconds
  std::vector<double> amplitudes;     // conductance difference at openings
  int openings = 0;
  int closings = 0;
};

/// Classifies segments by the level windows, merges adjacent same-class
/// segments (artifact segments are transparent), and collects dwell times
/// and opening amplitudes.
GatingEvents extract_events(const Idealization& ideal, const EventFilter& filt);

/// Maximum-likelihood rate of an exponential conditioned on [t_min, t_max]
/// (the missed-event correction).  t_max may be +infinity.
double fit_exponential_truncated(const std::vector<double>& dwells, double t_min, double t_max);

/// Standard error of the truncated-exponential rate via the observed
/// information at the estimate.
double rate_standard_error(const std::vector<double>& dwells, double t_min, double t_max,
                           double rate);

/// P(dwell in [t_min, t_max]) under Exp(rate).
double detection_probability(double rate, double t_min, double t_max);

/// Detection-corrected proportion of short events:
/// (N_s / P_s) / (N_s / P_s + N_l / P_l).  NaN when both corrected counts
/// vanish.
double event_proportions(long count_short, long count_long, double rate_short, double rate_long,
                         double short_min, double short_max, double long_min, double long_max);

/// Convenience: the dwells inside [t_min, t_max].
std::vector<double> filter_window(const std::vector<double>& dwells, double t_min, double t_max);

}  // namespace hilde

#endif
