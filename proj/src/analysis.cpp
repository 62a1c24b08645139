#include "hilde/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hilde {

double half_sample_mode(std::vector<double> values) {
  if (values.empty()) throw InputError("half_sample_mode: need at least one value");
  std::sort(values.begin(), values.end());
  size_t lo = 0, k = values.size();
  while (k > 2) {
    const size_t h = (k + 1) / 2;  // ceil(k/2)
    size_t best = lo;
    double best_range = values[lo + h - 1] - values[lo];
    for (size_t s = lo + 1; s + h - 1 < lo + k; ++s) {
      const double range = values[s + h - 1] - values[s];
      if (range < best_range) {  // leftmost wins ties
        best_range = range;
        best = s;
      }
    }
    lo = best;
    k = h;
  }
  return k == 1 ? values[lo] : 0.5 * (values[lo] + values[lo + 1]);
}

namespace {

enum class SegClass { Closed, Open, Artifact };

SegClass classify(double level, const EventFilter& f) {
  if (level >= f.closed_lo && level <= f.closed_hi) return SegClass::Closed;
  if (level >= f.open_lo && level <= f.open_hi) return SegClass::Open;
  return SegClass::Artifact;
}

}  // namespace

GatingEvents extract_events(const Idealization& ideal, const EventFilter& filt) {
  const auto& sig = ideal.signal;
  const int K = sig.num_changes();
  GatingEvents out;

  // Merged runs per class; artifact segments contribute to no dwell and do
  // not break a run.
  SegClass run_class = SegClass::Artifact;
  double run_duration = 0.0;
  double prev_level = 0.0;
  bool have_prev = false;
  auto close_run = [&]() {
    if (run_class == SegClass::Open)
      out.open_dwells.push_back(run_duration);
    else if (run_class == SegClass::Closed)
      out.closed_dwells.push_back(run_duration);
    run_duration = 0.0;
  };
  for (int s = 0; s <= K; ++s) {
    const double lo = (s == 0) ? 0.0 : sig.change_times[s - 1];
    const double hi = (s == K) ? sig.end_time : sig.change_times[s];
    const SegClass cls = classify(sig.levels[s], filt);
    if (cls == SegClass::Artifact) continue;
    if (have_prev && cls != run_class) {
      if (run_class == SegClass::Closed && cls == SegClass::Open) {
        ++out.openings;
        out.amplitudes.push_back(sig.levels[s] - prev_level);
      } else if (run_class == SegClass::Open && cls == SegClass::Closed) {
        ++out.closings;
      }
      close_run();
    }
    run_class = cls;
    run_duration += hi - lo;
    prev_level = sig.levels[s];
    have_prev = true;
  }
  if (have_prev) close_run();
  return out;
}

namespace {

// Score of the truncated-exponential likelihood at rate lambda.
double truncated_score(double lambda, double mean_dwell, double t_min, double t_max) {
  double boundary;
  if (std::isinf(t_max)) {
    boundary = t_min;
  } else {
    // (t_min e^{-l t_min} - t_max e^{-l t_max}) / (e^{-l t_min} - e^{-l t_max}),
    // written with the positive span to stay stable for large lambda.
    const double span = t_max - t_min;
    const double e = std::exp(-lambda * span);
    boundary = (t_min - t_max * e) / (1.0 - e);
  }
  return 1.0 / lambda - mean_dwell + boundary;
}

}  // namespace

double fit_exponential_truncated(const std::vector<double>& dwells, double t_min, double t_max) {
  if (dwells.size() < 2) throw InputError("fit_exponential_truncated: need >= 2 dwells");
  if (!(t_min >= 0.0) || !(t_max > t_min))
    throw InputError("fit_exponential_truncated: bad window");
  double mean = 0.0;
  for (double t : dwells) {
    if (t < t_min - 1e-12 || t > t_max + 1e-12)
      throw InputError("fit_exponential_truncated: dwell outside the window");
    mean += t;
  }
  mean /= dwells.size();
  if (!(mean > t_min))
    throw NumericError("fit_exponential_truncated: all dwells at the lower boundary");
  if (!std::isinf(t_max) && !(mean < 0.5 * (t_min + t_max)))
    throw NumericError("fit_exponential_truncated: mean at or beyond the window midpoint");

  // The conditioned family is a one-parameter exponential family, so the
  // score is strictly decreasing: bracket and bisect, then polish.
  double lo = 1e-12, hi = 1.0;
  while (truncated_score(hi, mean, t_min, t_max) > 0.0) {
    hi *= 2.0;
    if (hi > 1e15) throw NumericError("fit_exponential_truncated: rate diverged");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (truncated_score(mid, mean, t_min, t_max) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double rate_standard_error(const std::vector<double>& dwells, double t_min, double t_max,
                           double rate) {
  const double n = static_cast<double>(dwells.size());
  const double h = rate * 1e-5;
  double mean = 0.0;
  for (double t : dwells) mean += t;
  mean /= dwells.size();
  const double ds = (truncated_score(rate + h, mean, t_min, t_max) -
                     truncated_score(rate - h, mean, t_min, t_max)) /
                    (2.0 * h);
  const double info = -n * ds;
  return info > 0.0 ? 1.0 / std::sqrt(info) : std::numeric_limits<double>::quiet_NaN();
}

double detection_probability(double rate, double t_min, double t_max) {
  const double hi = std::isinf(t_max) ? 0.0 : std::exp(-rate * t_max);
  return std::exp(-rate * t_min) - hi;
}

double event_proportions(long count_short, long count_long, double rate_short, double rate_long,
                         double short_min, double short_max, double long_min, double long_max) {
  const double ps = detection_probability(rate_short, short_min, short_max);
  const double pl = detection_probability(rate_long, long_min, long_max);
  if (!(ps > 0.0) || !(pl > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double cs = count_short / ps;
  const double cl = count_long / pl;
  if (cs + cl <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return cs / (cs + cl);
}

std::vector<double> filter_window(const std::vector<double>& dwells, double t_min, double t_max) {
  std::vector<double> out;
  for (double t : dwells)
    if (t >= t_min && t <= t_max) out.push_back(t);
  return out;
}

}  // namespace hilde
