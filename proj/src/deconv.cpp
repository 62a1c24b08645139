#include "hilde/deconv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hilde {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

LocalDeconvolver::LocalDeconvolver(const FilterKernel& k, const DeconvConfig& cfg)
    : k_(&k), cfg_(cfg) {
  if (!(cfg.gamma2 > 0.0)) throw InputError("DeconvConfig: gamma2 must be positive");
  if (cfg.long_segment_min < k.m() + 2)
    throw InputError("DeconvConfig: long_segment_min must be at least m + 2");
}

double LocalDeconvolver::final_spacing() const {
  double s = 1.0 / k_->sample_rate();
  for (int r = 0; r < cfg_.refinements; ++r) s /= cfg_.refinement_factor;
  return s;
}

LocalDeconvolver::Window LocalDeconvolver::make_window(const Trace& tr, double lo_time,
                                                       double hi_time) const {
  const double fs = k_->sample_rate();
  const int m = k_->m();
  const int first_affected = static_cast<int>(std::floor(lo_time * fs)) + 1;
  const int last_affected = static_cast<int>(std::ceil(hi_time * fs)) + m - 1;
  Window w;
  w.first = std::max(1, first_affected - m);
  w.last = std::min(tr.n(), last_affected + m);
  const int N = w.last - w.first + 1;
  if (N < 2) throw NumericError("deconvolution window collapsed");
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
  for (int q = 0; q < N; ++q) {
    for (int r = -m; r <= m; ++r)
      if (q + r >= 0 && q + r < N) S(q, q + r) = k_->corr_inf(r);
    S(q, q) += cfg_.gamma2;
  }
  w.minv = S.llt().solve(Eigen::MatrixXd::Identity(N, N));
  return w;
}

double LocalDeconvolver::refine_change(const Trace& tr, double tau_hat, double c_left,
                                       double c_right, double grid_lo, double grid_hi,
                                       double clip_lo, double clip_hi, int refinements) const {
  const double fs = k_->sample_rate();
  const double lo = std::max(grid_lo, clip_lo);
  const double hi = std::min(grid_hi, clip_hi);
  if (!(lo <= hi)) return tau_hat;

  const Window w = make_window(tr, grid_lo, grid_hi);
  const int N = w.last - w.first + 1;
  Eigen::VectorXd r(N);
  auto objective = [&](double tau) {
    for (int q = 0; q < N; ++q) {
      const double tu = (w.first + q) / fs;
      const double mu = c_left + (c_right - c_left) * k_->step_response(tu - tau);
      r[q] = tr.samples[w.first - 1 + q] - mu;
    }
    return r.dot(w.minv * r);
  };

  double best_tau = std::min(std::max(tau_hat, lo), hi);
  double best_val = kInf;
  double spacing = 1.0 / fs;
  const int coarse_steps = static_cast<int>(std::lround((grid_hi - grid_lo) * fs));
  for (int j = 0; j <= coarse_steps; ++j) {
    const double tau = grid_lo + j * spacing;
    if (tau < lo || tau > hi) continue;
    const double val = objective(tau);
    if (val < best_val) {
      best_val = val;
      best_tau = tau;
    }
  }
  for (int round = 0; round < refinements; ++round) {
    const double fine = spacing / cfg_.refinement_factor;
    for (int j = -cfg_.refinement_factor; j <= cfg_.refinement_factor; ++j) {
      if (j == 0) continue;
      const double tau = best_tau + j * fine;
      if (tau < lo || tau > hi) continue;
      const double val = objective(tau);
      if (val < best_val) {
        best_val = val;
        best_tau = tau;
      }
    }
    spacing = fine;
  }
  return best_tau;
}

LocalDeconvolver::PeakFit LocalDeconvolver::refine_peak(const Trace& tr, double tau_l_hat,
                                                        double tau_r_hat, double grid_l_lo,
                                                        double grid_l_hi, double grid_r_lo,
                                                        double grid_r_hi, double c_left,
                                                        double c_right, double clip_lo,
                                                        double clip_hi) const {
  const double fs = k_->sample_rate();
  const double lo = std::max(grid_l_lo, clip_lo);
  const double hi = std::min(grid_r_hi, clip_hi);
  const double min_sep = final_spacing();

  PeakFit fit;
  if (!(lo + min_sep <= hi)) return fit;

  const Window w = make_window(tr, grid_l_lo, grid_r_hi);
  const int N = w.last - w.first + 1;
  Eigen::VectorXd b(N), v(N);
  auto objective = [&](double tau_l, double tau_r, double& level) {
    for (int q = 0; q < N; ++q) {
      const double tu = (w.first + q) / fs;
      const double sl = k_->step_response(tu - tau_l);
      const double sr = k_->step_response(tu - tau_r);
      b[q] = tr.samples[w.first - 1 + q] - (c_left * (1.0 - sl) + c_right * sr);
      v[q] = sl - sr;
    }
    const Eigen::VectorXd Mb = w.minv * b;
    const double vMv = v.dot(w.minv * v);
    if (!(vMv > 0.0)) return kInf;
    const double g = v.dot(Mb);
    level = g / vMv;
    return b.dot(Mb) - g * g / vMv;
  };

  double best_val = kInf;
  double spacing = 1.0 / fs;
  double level = 0.0;
  const int steps_l = static_cast<int>(std::lround((grid_l_hi - grid_l_lo) * fs));
  const int steps_r = static_cast<int>(std::lround((grid_r_hi - grid_r_lo) * fs));
  for (int jl = 0; jl <= steps_l; ++jl) {
    const double tl = grid_l_lo + jl * spacing;
    if (tl < lo || tl > hi) continue;
    for (int jr = 0; jr <= steps_r; ++jr) {
      const double tr2 = grid_r_lo + jr * spacing;
      if (tr2 < lo || tr2 > hi || tr2 < tl + min_sep) continue;
      double lev;
      const double val = objective(tl, tr2, lev);
      if (val < best_val) {
        best_val = val;
        fit.tau_left = tl;
        fit.tau_right = tr2;
        level = lev;
      }
    }
  }
  if (!(best_val < kInf)) return fit;

  for (int round = 0; round < cfg_.refinements; ++round) {
    const double fine = spacing / cfg_.refinement_factor;
    const double base_l = fit.tau_left, base_r = fit.tau_right;
    for (int jl = -cfg_.refinement_factor; jl <= cfg_.refinement_factor; ++jl) {
      const double tl = base_l + jl * fine;
      if (tl < lo || tl > hi) continue;
      for (int jr = -cfg_.refinement_factor; jr <= cfg_.refinement_factor; ++jr) {
        if (jl == 0 && jr == 0) continue;
        const double tr2 = base_r + jr * fine;
        if (tr2 < lo || tr2 > hi || tr2 < tl + min_sep) continue;
        double lev;
        const double val = objective(tl, tr2, lev);
        if (val < best_val) {
          best_val = val;
          fit.tau_left = tl;
          fit.tau_right = tr2;
          level = lev;
        }
      }
    }
    spacing = fine;
  }
  fit.level = level;
  fit.ok = true;
  return fit;
}

namespace {

// Variance estimation shared by deconvolve and idealize_variance: long
// segments use the squared difference estimator, short segments the local
// weighted estimator with flanking parameters, anything unresolvable
// inherits a neighbour value.
Eigen::VectorXd segment_variances(const Trace& tr, const PiecewiseSignal& sig,
                                  const FilterKernel& k, const DeconvConfig& cfg,
                                  std::vector<bool>* inherited_out) {
  const int K = sig.num_changes();
  const int n = tr.n();
  const double fs = tr.sample_rate;
  const int m = k.m();
  Eigen::VectorXd var = Eigen::VectorXd::Constant(K + 1, std::numeric_limits<double>::quiet_NaN());
  std::vector<int> first(K + 1), last(K + 1);
  for (int s = 0; s <= K; ++s) {
    const double lo = (s == 0) ? 0.0 : sig.change_times[s - 1];
    const double hi = (s == K) ? (n / fs) : sig.change_times[s];
    first[s] = static_cast<int>(std::floor(lo * fs)) + 1;
    last[s] = std::min(n, static_cast<int>(std::floor(hi * fs)));
  }
  for (int s = 0; s <= K; ++s) {
    const int len = last[s] - first[s] + 1;
    if (len < cfg.long_segment_min) continue;
    const double sd = difference_sd(tr, k, first[s], last[s]);
    if (!std::isnan(sd)) var[s] = sd * sd;
  }
  for (int s = 1; s < K; ++s) {
    if (!std::isnan(var[s])) continue;
    if (std::isnan(var[s - 1]) || std::isnan(var[s + 1])) continue;
    LocalHypothesis hyp;
    hyp.tau_left = sig.change_times[s - 1];
    hyp.tau_right = sig.change_times[s];
    hyp.first_obs = first[s];
    hyp.last_obs = std::min(n, static_cast<int>(std::ceil(hyp.tau_right * fs)) + m - 1);
    hyp.c_left = sig.levels[s - 1];
    hyp.c_right = sig.levels[s + 1];
    hyp.sd_left = std::sqrt(var[s - 1]);
    hyp.sd_right = std::sqrt(var[s + 1]);
    try {
      var[s] = estimate_s2(tr, hyp, k, sig.levels[s]);
    } catch (const NumericError&) {
      // falls through to inheritance
    }
  }
  std::vector<bool> inherited(K + 1, false);
  double carry = std::numeric_limits<double>::quiet_NaN();
  for (int s = K; s >= 0; --s) {
    if (!std::isnan(var[s])) carry = var[s];
  }
  for (int s = 0; s <= K; ++s) {
    if (std::isnan(var[s])) {
      inherited[s] = true;
      var[s] = carry;
    } else {
      carry = var[s];
    }
  }
  for (int s = 0; s <= K; ++s)
    if (std::isnan(var[s])) var[s] = 0.0;
  if (inherited_out) *inherited_out = inherited;
  return var;
}

}  // namespace

Idealization deconvolve(const Trace& tr, const Idealization& ideal,
                        const std::vector<ShortEvent>& events, const FilterKernel& k,
                        const DeconvConfig& cfg) {
  (void)events;  // provenance only; peak structure is read off the origins
  const auto& sig = ideal.signal;
  const int K = sig.num_changes();
  const int n = tr.n();
  const double fs = tr.sample_rate;
  const int m = k.m();

  Idealization out = ideal;
  out.sync_flags();
  if (K == 0) {
    double mean = 0.0;
    const int lo = std::min(m + 1, n);
    for (int u = lo; u <= n; ++u) mean += tr.samples[u - 1];
    mean /= (n - lo + 1);
    out.signal.levels[0] = mean;
    const double sd = difference_sd(tr, k, 1, n);
    out.signal.sds[0] = std::isnan(sd) ? 0.0 : sd;
    return out;
  }

  std::vector<long> g(K + 2);
  g[0] = 0;
  for (int c = 0; c < K; ++c) g[c + 1] = std::lround(sig.change_times[c] * fs);
  g[K + 1] = n;
  std::vector<long> seg_len(K + 1);
  std::vector<bool> is_long(K + 1);
  for (int s = 0; s <= K; ++s) {
    seg_len[s] = g[s + 1] - g[s];
    is_long[s] = seg_len[s] >= cfg.long_segment_min;
  }

  // Long-segment levels: mean of interior samples, first m skipped.
  Eigen::VectorXd levels = sig.levels;
  for (int s = 0; s <= K; ++s) {
    if (!is_long[s]) continue;
    const long a = g[s] + 1 + m, b = g[s + 1];
    if (b < a) continue;
    double mean = 0.0;
    for (long u = a; u <= b; ++u) mean += tr.samples[u - 1];
    levels[s] = mean / (b - a + 1);
  }

  LocalDeconvolver deconv(k, cfg);
  Eigen::VectorXd tau = sig.change_times;

  const int mh = (m + 1) / 2;
  auto grid_bounds = [&](int change, double& lo, double& hi) {
    if (ideal.origins[change] == ChangeOrigin::Multiresolution) {
      lo = sig.change_times[change] - m / fs;
      hi = sig.change_times[change];
    } else {
      lo = sig.change_times[change] - mh / fs;
      hi = sig.change_times[change] + mh / fs;
    }
  };

  int c = 0;
  while (c < K) {
    const bool peak = (c + 1 < K) && !is_long[c + 1] && is_long[c] && is_long[c + 2];
    if (peak) {
      const double clip_lo = (c > 0) ? 0.5 * (tau[c - 1] + sig.change_times[c]) : -kInf;
      const double clip_hi =
          (c + 2 < K) ? 0.5 * (sig.change_times[c + 1] + sig.change_times[c + 2]) : kInf;
      double gl_lo, gl_hi, gr_lo, gr_hi;
      grid_bounds(c, gl_lo, gl_hi);
      grid_bounds(c + 1, gr_lo, gr_hi);
      const auto fit = deconv.refine_peak(tr, sig.change_times[c], sig.change_times[c + 1],
                                          gl_lo, gl_hi, gr_lo, gr_hi,
                                          levels[c], levels[c + 2], clip_lo, clip_hi);
      if (fit.ok) {
        tau[c] = fit.tau_left;
        tau[c + 1] = fit.tau_right;
        levels[c + 1] = fit.level;
        out.deconvolved[c] = out.deconvolved[c + 1] = true;
      }
      c += 2;
      continue;
    }
    if (is_long[c] && is_long[c + 1]) {
      const double clip_lo = (c > 0) ? 0.5 * (tau[c - 1] + sig.change_times[c]) : -kInf;
      const double clip_hi =
          (c + 1 < K) ? 0.5 * (sig.change_times[c] + sig.change_times[c + 1]) : kInf;
      double grid_lo, grid_hi;
      grid_bounds(c, grid_lo, grid_hi);
      tau[c] = deconv.refine_change(tr, sig.change_times[c], levels[c], levels[c + 1], grid_lo,
                                    grid_hi, clip_lo, clip_hi, cfg.refinements);
      out.deconvolved[c] = true;
    }
    ++c;
  }

  out.signal.change_times = tau;
  out.signal.levels = levels;
  std::vector<bool> inherited;
  const Eigen::VectorXd var = segment_variances(tr, out.signal, k, cfg, &inherited);
  for (int s = 0; s <= K; ++s) out.signal.sds[s] = std::sqrt(std::max(var[s], 0.0));
  out.sd_inherited = inherited;
  return out;
}

PiecewiseSignal idealize_variance(const Trace& tr, const Idealization& ideal,
                                  const FilterKernel& k, const DeconvConfig& cfg) {
  PiecewiseSignal out;
  out.change_times = ideal.signal.change_times;
  out.end_time = ideal.signal.end_time;
  out.levels = segment_variances(tr, ideal.signal, k, cfg, nullptr);
  out.sds = Eigen::VectorXd::Zero(out.levels.size());
  return out;
}

}  // namespace hilde
