#include "hilde/detect_short.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hilde/deconv.hpp"
#include "hilde/model.hpp"
#include "hilde/parallel.hpp"

namespace hilde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kVarFloor = 1e-6;  // relative floor for the plug-in variance
constexpr double kPhiInv075 = 0.6744897501960817;

// Alternative-side filter geometry of one window: weight vectors and the
// exact quadratic-form constants behind the variance estimator.
struct PeakGeometry {
  int N = 0;
  Eigen::ArrayXd step_l, step_r;  // step(t_u - tauL), step(t_u - tauR)
  Eigen::ArrayXd v, w0, gL0, gR0;
  double V = 0.0;     // sum v^2
  double A = 0.0;     // tr(C Wt)
  double trGL = 0.0;  // tr(C GL), tr(C GR): B = sL^2 trGL + sR^2 trGR
  double trGR = 0.0;
};

// tr(H W H M) for H = I - v v^T / V, W = diag(w0), symmetric banded M.
double projected_trace(const Eigen::ArrayXd& v, const Eigen::ArrayXd& w0, double V,
                       const Eigen::MatrixXd& M) {
  const Eigen::VectorXd Mv = M * v.matrix();
  const double tr_WM = (w0 * M.diagonal().array()).sum();
  const double t2 = (w0 * v * Mv.array()).sum();
  const double vMv = v.matrix().dot(Mv);
  const double w0v2 = (w0 * v * v).sum();
  return tr_WM - 2.0 * t2 / V + vMv * w0v2 / (V * V);
}

PeakGeometry make_geometry(const FilterKernel& k, double tau_l, double tau_r, int first_obs,
                           int last_obs) {
  const double fs = k.sample_rate();
  const int m = k.m();
  const int N = last_obs - first_obs + 1;
  if (N < 1) throw InputError("local window: empty observation range");
  PeakGeometry g;
  g.N = N;
  g.step_l.resize(N);
  g.step_r.resize(N);
  g.v.resize(N);
  g.w0.resize(N);
  g.gL0.resize(N);
  g.gR0.resize(N);
  for (int q = 0; q < N; ++q) {
    const double tu = (first_obs + q) / fs;
    const double sl = k.step_response(tu - tau_l);
    const double sr = k.step_response(tu - tau_r);
    g.step_l[q] = sl;
    g.step_r[q] = sr;
    g.v[q] = sl - sr;
    const double rl = k.corr(tu - tau_l, 0.0);
    const double rr = k.corr(tu - tau_r, 0.0);
    g.w0[q] = rl - rr;
    g.gL0[q] = 1.0 - rl;
    g.gR0[q] = rr;
  }
  g.V = (g.v * g.v).sum();
  if (!(g.V > 0.0)) throw NumericError("local window: degenerate design (sum v^2 = 0)");

  Eigen::MatrixXd Wt = Eigen::MatrixXd::Zero(N, N);
  Eigen::MatrixXd GL = Eigen::MatrixXd::Zero(N, N);
  Eigen::MatrixXd GR = Eigen::MatrixXd::Zero(N, N);
  for (int q = 0; q < N; ++q) {
    const double tu = (first_obs + q) / fs;
    for (int r = -m; r <= m; ++r) {
      const int q2 = q + r;
      if (q2 < 0 || q2 >= N) continue;
      const double lag = r / fs;
      const double rl = k.corr(tu - tau_l, lag);
      const double rr = k.corr(tu - tau_r, lag);
      Wt(q, q2) = rl - rr;
      GL(q, q2) = k.corr_inf(r) - rl;
      GR(q, q2) = rr;
    }
  }
  g.A = projected_trace(g.v, g.w0, g.V, Wt);
  g.trGL = projected_trace(g.v, g.w0, g.V, GL);
  g.trGR = projected_trace(g.v, g.w0, g.V, GR);
  return g;
}

PeakGeometry geometry_for(const LocalHypothesis& hyp, const FilterKernel& k) {
  return make_geometry(k, hyp.tau_left, hyp.tau_right, hyp.first_obs, hyp.last_obs);
}

Eigen::ArrayXd window_cLR(const PeakGeometry& g, const LocalHypothesis& hyp) {
  return hyp.c_left * (1.0 - g.step_l) + hyp.c_right * g.step_r;
}

double median_of(std::vector<double> xs) {
  const size_t n = xs.size();
  auto mid = xs.begin() + n / 2;
  std::nth_element(xs.begin(), mid, xs.end());
  double hi = *mid;
  if (n % 2 == 1) return hi;
  std::nth_element(xs.begin(), mid - 1, xs.end());
  return 0.5 * (hi + *(mid - 1));
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  const size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = (n - 1) * p;
  const size_t lo = static_cast<size_t>(h);
  if (lo + 1 >= n) return sorted[n - 1];
  return sorted[lo] + (h - lo) * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

std::optional<LocalHypothesis> build_hypothesis(const Idealization& ideal, double sample_rate,
                                                int i, int j, int m) {
  if (!(j > i)) throw InputError("build_hypothesis: window needs j > i");
  const int len = j - i;
  LocalHypothesis hyp;
  hyp.tau_left = i / sample_rate;
  hyp.tau_right = j / sample_rate;
  hyp.first_obs = i + 1;
  hyp.last_obs = j + m - 1;

  const double ext_lo = (i - m + 1) / sample_rate;
  const double ext_hi = (j + m - 1) / sample_rate;
  const auto& sig = ideal.signal;
  int found = -1, count = 0;
  for (int c = 0; c < sig.num_changes(); ++c) {
    const double tau = sig.change_times[c];
    if (tau >= ext_lo && tau <= ext_hi) {
      ++count;
      found = c;
    }
    if (tau > ext_hi) break;
  }
  if (count >= 2) return std::nullopt;
  if (count == 0) {
    const int seg = sig.segment_at(hyp.tau_left);
    hyp.c_left = hyp.c_right = sig.levels[seg];
    hyp.sd_left = hyp.sd_right = sig.sds[seg];
    hyp.has_change = false;
  } else {
    hyp.has_change = true;
    hyp.tau = sig.change_times[found];
    hyp.c_left = sig.levels[found];
    hyp.c_right = sig.levels[found + 1];
    hyp.sd_left = sig.sds[found];
    hyp.sd_right = sig.sds[found + 1];
  }
  (void)len;
  return hyp;
}

double estimate_c(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k) {
  const PeakGeometry g = geometry_for(hyp, k);
  const Eigen::ArrayXd cLR = window_cLR(g, hyp);
  const auto y = tr.samples.segment(hyp.first_obs - 1, g.N).array();
  return (g.v * (y - cLR)).sum() / g.V;
}

void ab_constants(const LocalHypothesis& hyp, const FilterKernel& k, double& A, double& B) {
  const PeakGeometry g = geometry_for(hyp, k);
  A = g.A;
  B = hyp.sd_left * hyp.sd_left * g.trGL + hyp.sd_right * hyp.sd_right * g.trGR;
}

double estimate_s2(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k,
                   double c_hat) {
  const PeakGeometry g = geometry_for(hyp, k);
  if (!(g.A > 0.0)) throw NumericError("estimate_s2: window too short (A <= 0)");
  const Eigen::ArrayXd cLR = window_cLR(g, hyp);
  const auto y = tr.samples.segment(hyp.first_obs - 1, g.N).array();
  const double num = (g.w0 * (y - cLR - c_hat * g.v).square()).sum();
  const double B = hyp.sd_left * hyp.sd_left * g.trGL + hyp.sd_right * hyp.sd_right * g.trGR;
  return std::max((num - B) / g.A, 0.0);
}

double local_stat(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k) {
  const PeakGeometry g = geometry_for(hyp, k);
  if (!(g.A > 0.0)) throw NumericError("local_stat: window too short (A <= 0)");
  const Eigen::ArrayXd cLR = window_cLR(g, hyp);
  const auto y = tr.samples.segment(hyp.first_obs - 1, g.N).array();
  const Eigen::ArrayXd delta = y - cLR;
  const double c_hat = (g.v * delta).sum() / g.V;
  const Eigen::ArrayXd res = delta - c_hat * g.v;
  const double num = (g.w0 * res.square()).sum();
  const double sL2 = hyp.sd_left * hyp.sd_left, sR2 = hyp.sd_right * hyp.sd_right;
  const double B = sL2 * g.trGL + sR2 * g.trGR;
  const double s2_hat = std::max((num - B) / g.A, 0.0);

  const double fs = k.sample_rate();
  double T = 0.0;
  for (int q = 0; q < g.N; ++q) {
    double c0, s02;
    if (hyp.has_change) {
      const double x = (hyp.first_obs + q) / fs - hyp.tau;
      const double st = k.step_response(x);
      const double rho = k.corr(x, 0.0);
      c0 = hyp.c_left * (1.0 - st) + hyp.c_right * st;
      s02 = sL2 * (1.0 - rho) + sR2 * rho;
    } else {
      c0 = hyp.c_left;
      s02 = sL2;
    }
    if (!(s02 > 0.0)) return -kInf;
    double s12 = g.w0[q] * s2_hat + sL2 * g.gL0[q] + sR2 * g.gR0[q];
    s12 = std::max(s12, kVarFloor * s02);
    const double z0 = y[q] - c0;
    const double r1 = res[q];
    T += std::log(s02 / s12) + z0 * z0 / s02 - r1 * r1 / s12;
  }
  return T;
}

double lr_stat_homogeneous(const Trace& tr, const LocalHypothesis& hyp, const FilterKernel& k,
                           double sigma0_sq, double gamma_sq) {
  if (!(sigma0_sq > 0.0) || !(gamma_sq > 0.0))
    throw InputError("lr_stat_homogeneous: sigma0_sq and gamma_sq must be positive");
  const PeakGeometry g = geometry_for(hyp, k);
  const int N = g.N;
  const double gamma_rel = gamma_sq / sigma0_sq;
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
  for (int q = 0; q < N; ++q) {
    for (int r = -k.m(); r <= k.m(); ++r) {
      if (q + r < 0 || q + r >= N) continue;
      S(q, q + r) = k.corr_inf(r);
    }
    S(q, q) += gamma_rel;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericError("lr_stat_homogeneous: regularized covariance not positive definite");

  const auto y = tr.samples.segment(hyp.first_obs - 1, N);
  const Eigen::VectorXd base = window_cLR(g, hyp).matrix();
  Eigen::VectorXd c0(N);
  const double fs = k.sample_rate();
  for (int q = 0; q < N; ++q) {
    if (hyp.has_change) {
      const double st = k.step_response((hyp.first_obs + q) / fs - hyp.tau);
      c0[q] = hyp.c_left * (1.0 - st) + hyp.c_right * st;
    } else {
      c0[q] = hyp.c_left;
    }
  }
  const Eigen::VectorXd b = y - base;
  const Eigen::VectorXd Mb = llt.solve(b);
  const Eigen::VectorXd Mv = llt.solve(g.v.matrix());
  const double Vp = g.v.matrix().dot(Mv);
  const Eigen::VectorXd d = base - c0;
  const double T = 2.0 * d.dot(Mb) + d.dot(llt.solve(d)) + b.dot(Mv) * b.dot(Mv) / Vp;
  return T / sigma0_sq;
}

double difference_sd(const Trace& tr, const FilterKernel& k, int a, int b) {
  const int m = k.m();
  auto collect = [&](int u_lo, int u_hi) {
    std::vector<double> d;
    for (int u = u_lo; u <= u_hi; ++u)
      d.push_back(tr.samples[u + m - 1] - tr.samples[u - 1]);
    return d;
  };
  std::vector<double> diffs;
  if (b - m - (a + m) + 1 >= 2)
    diffs = collect(a + m, b - m);
  else if (b - m - a + 1 >= 2)
    diffs = collect(a, b - m);
  else
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(diffs.begin(), diffs.end());
  const double iqr = quantile_type7(diffs, 0.75) - quantile_type7(diffs, 0.25);
  const double var_scale = 2.0 * (k.corr_inf(0) - k.corr_inf(m));
  return iqr / (2.0 * kPhiInv075 * std::sqrt(var_scale));
}

Idealization refit_long_segments(const Trace& tr, const Idealization& ideal,
                                 const FilterKernel& k, const RefitConfig& cfg) {
  const int n = tr.n();
  const int m = k.m();
  const double fs = tr.sample_rate;
  const int K = ideal.signal.num_changes();

  std::vector<long> g(K + 2);
  g[0] = 0;
  for (int c = 0; c < K; ++c) g[c + 1] = std::lround(ideal.signal.change_times[c] * fs);
  g[K + 1] = n;

  auto seg_median = [&](long a, long b) {
    long lo = a + m;
    if (lo > b) lo = a;
    std::vector<double> xs;
    xs.reserve(b - lo + 1);
    for (long u = lo; u <= b; ++u) xs.push_back(tr.samples[u - 1]);
    return median_of(std::move(xs));
  };

  // Flank medians from the current boundaries, then grid-restricted
  // relocation of isolated changes (the detection step ignores the
  // convolution, so locations sit up to m samples late).
  std::vector<double> med(K + 1);
  for (int s = 0; s <= K; ++s) med[s] = seg_median(g[s] + 1, g[s + 1]);

  Idealization out = ideal;
  DeconvConfig dcfg;
  dcfg.long_segment_min = cfg.long_segment_min;
  LocalDeconvolver deconv(k, dcfg);
  std::vector<long> g2 = g;
  for (int c = 0; c < K; ++c) {
    const long left_len = g[c + 1] - g[c];
    const long right_len = g[c + 2] - g[c + 1];
    if (left_len < cfg.long_segment_min || right_len < cfg.long_segment_min) continue;
    const double tau_hat = g[c + 1] / fs;
    const double clip_lo = (c > 0) ? 0.5 * (g2[c] + g[c + 1]) / fs : -kInf;
    const double clip_hi = (c + 1 < K) ? 0.5 * (g[c + 1] + g[c + 2]) / fs : kInf;
    const double tau_new = deconv.refine_change(tr, tau_hat, med[c], med[c + 1],
                                                tau_hat - m / fs, tau_hat, clip_lo, clip_hi,
                                                /*refinements=*/0);
    g2[c + 1] = std::lround(tau_new * fs);
  }

  // Medians and difference-based sds on the updated boundaries.
  out.signal.change_times.resize(K);
  for (int c = 0; c < K; ++c) out.signal.change_times[c] = g2[c + 1] / fs;
  out.sync_flags();
  for (int s = 0; s <= K; ++s) {
    out.signal.levels[s] = seg_median(g2[s] + 1, g2[s + 1]);
    const double sd = difference_sd(tr, k, static_cast<int>(g2[s] + 1),
                                    static_cast<int>(g2[s + 1]));
    out.signal.sds[s] = sd;  // NaN marks segments needing a neighbour sd
  }
  // Segments too short for the difference estimator inherit a neighbour sd.
  double last_valid = std::numeric_limits<double>::quiet_NaN();
  for (int s = 0; s <= K; ++s) {
    if (std::isnan(out.signal.sds[s])) {
      out.sd_inherited[s] = true;
    } else {
      last_valid = out.signal.sds[s];
    }
  }
  for (int s = K; s >= 0; --s) {
    if (!out.sd_inherited[s])
      last_valid = out.signal.sds[s];
    else if (!std::isnan(last_valid))
      out.signal.sds[s] = last_valid;
  }
  last_valid = std::numeric_limits<double>::quiet_NaN();
  for (int s = 0; s <= K; ++s) {
    if (!out.sd_inherited[s])
      last_valid = out.signal.sds[s];
    else if (!std::isnan(last_valid))
      out.signal.sds[s] = last_valid;
  }
  for (int s = 0; s <= K; ++s)
    if (std::isnan(out.signal.sds[s])) out.signal.sds[s] = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// LocalTester

struct LocalTester::Geometry {
  int N = 0;
  Eigen::ArrayXd v, vw, w0, sLR1, gL0, gR0;
  Eigen::ArrayXd step_l, step_r;
  double V = 0.0, sum_v = 0.0, sum_vw = 0.0, sum_w0 = 0.0, w0v2 = 0.0;
  double A = 0.0, trGL = 0.0, trGR = 0.0;
  // homogeneous-LR machinery
  Eigen::MatrixXd Minv;
  Eigen::ArrayXd lr_w;  // Minv v
  double lr_V = 0.0;    // v^T Minv v
};

LocalTester::LocalTester(const FilterKernel& k, int l_max, LocalTestFamily family,
                         double lr_gamma_over_sigma)
    : k_(&k), l_max_(l_max), m_(k.m()), family_(family),
      lr_gamma_over_sigma_(lr_gamma_over_sigma) {
  if (l_max < 1) throw InputError("LocalTester: l_max must be >= 1");
  const double fs = k.sample_rate();
  geo_.resize(l_max);
  for (int len = 1; len <= l_max; ++len) {
    const PeakGeometry pg = make_geometry(k, 0.0, len / fs, 1, len + m_ - 1);
    Geometry& g = geo_[len - 1];
    g.N = pg.N;
    g.v = pg.v;
    g.w0 = pg.w0;
    g.gL0 = pg.gL0;
    g.gR0 = pg.gR0;
    g.step_l = pg.step_l;
    g.step_r = pg.step_r;
    g.vw = pg.v * pg.w0;
    g.sLR1 = 1.0 - pg.w0;
    g.V = pg.V;
    g.sum_v = pg.v.sum();
    g.sum_vw = g.vw.sum();
    g.sum_w0 = pg.w0.sum();
    g.w0v2 = (pg.w0 * pg.v * pg.v).sum();
    g.A = pg.A;
    g.trGL = pg.trGL;
    g.trGR = pg.trGR;
    if (family_ == LocalTestFamily::HomogeneousLR) {
      const int N = g.N;
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
      for (int q = 0; q < N; ++q) {
        for (int r = -m_; r <= m_; ++r)
          if (q + r >= 0 && q + r < N) S(q, q + r) = k.corr_inf(r);
        S(q, q) += lr_gamma_over_sigma_;
      }
      g.Minv = S.llt().solve(Eigen::MatrixXd::Identity(N, N));
      g.lr_w = (g.Minv * g.v.matrix()).array();
      g.lr_V = (g.lr_w * g.v).sum();
    }
  }
}

LocalTester::~LocalTester() = default;
LocalTester::LocalTester(LocalTester&&) noexcept = default;
LocalTester& LocalTester::operator=(LocalTester&&) noexcept = default;

const LocalTester::Geometry& LocalTester::geometry(int len) const { return geo_[len - 1]; }

// Fast path: every change of the refit idealization is farther than m-1
// samples from the window, so the hypothesis is a constant signal with level
// c and noise variance s2.  Scaled so the statistic needs one pass of dots
// and one pass with a running product replacing per-term logs.
double LocalTester::stat_fast(const double* y, int i, int len, double c, double s2) const {
  const Geometry& g = geo_[len - 1];
  const int N = g.N;
  const double* p = y + i;  // p[q] = observation i+1+q
  if (!(s2 > 0.0)) return -kInf;

  const double* v = g.v.data();
  const double* vw = g.vw.data();
  const double* w0 = g.w0.data();
  const double* sLR1 = g.sLR1.data();

  double s_vy = 0.0, s_vwy = 0.0, s_w0y = 0.0, s_w0y2 = 0.0, s_y = 0.0, s_y2 = 0.0;
  for (int q = 0; q < N; ++q) {
    const double yq = p[q];
    s_vy += v[q] * yq;
    s_vwy += vw[q] * yq;
    s_w0y += w0[q] * yq;
    s_w0y2 += w0[q] * yq * yq;
    s_y += yq;
    s_y2 += yq * yq;
  }
  const double s_vz = s_vy - c * g.sum_v;
  const double s_vwz = s_vwy - c * g.sum_vw;
  const double s_w0z2 = s_w0y2 - 2.0 * c * s_w0y + c * c * g.sum_w0;
  const double a = s_vz / g.V;
  const double num = s_w0z2 - 2.0 * a * s_vwz + a * a * g.w0v2;
  const double B_over_s2 = g.trGL + g.trGR;
  const double theta = std::max((num / s2 - B_over_s2) / g.A, 0.0);  // s2_hat / s2

  const double q0 = (s_y2 - 2.0 * c * s_y + N * c * c) / s2;

  // ratio_q = s1^2/s0^2 = w0 theta + (1 - w0), floored.
  double prod[4] = {1.0, 1.0, 1.0, 1.0};
  double qacc[4] = {0.0, 0.0, 0.0, 0.0};
  long exp_sum = 0;
  int q = 0;
  int since_renorm = 0;
  for (; q + 4 <= N; q += 4) {
    for (int l = 0; l < 4; ++l) {
      const int t = q + l;
      double ratio = w0[t] * theta + sLR1[t];
      if (ratio < kVarFloor) ratio = kVarFloor;
      const double r = (p[t] - c) - a * v[t];
      qacc[l] += r * r / ratio;
      prod[l] *= ratio;
    }
    if (++since_renorm == 16) {
      since_renorm = 0;
      for (int l = 0; l < 4; ++l) {
        int e;
        prod[l] = std::frexp(prod[l], &e);
        exp_sum += e;
      }
    }
  }
  double log_prod = 0.0, qtail = 0.0;
  for (; q < N; ++q) {
    double ratio = w0[q] * theta + sLR1[q];
    if (ratio < kVarFloor) ratio = kVarFloor;
    const double r = (p[q] - c) - a * v[q];
    qtail += r * r / ratio;
    log_prod += std::log(ratio);
  }
  const double prod_all = prod[0] * prod[1] * prod[2] * prod[3];
  log_prod += std::log(prod_all) + exp_sum * 0.6931471805599453;
  const double q1 = (qacc[0] + qacc[1] + qacc[2] + qacc[3] + qtail) / s2;
  return -log_prod + q0 - q1;
}

double LocalTester::stat_fast_lr(const double* y, int i, int len, double c) const {
  const Geometry& g = geo_[len - 1];
  const double* p = y + i;
  const double* w = g.lr_w.data();
  double s = 0.0, sw = 0.0;
  for (int q = 0; q < g.N; ++q) {
    s += w[q] * p[q];
    sw += w[q];
  }
  const double gnum = s - c * sw;  // w^T (y - c)
  return gnum * gnum / g.lr_V;
}

double LocalTester::window_stat(const Trace& tr, int i, int len, const LocalHypothesis& hyp,
                                double sigma0_sq) const {
  const Geometry& g = geo_[len - 1];
  const int N = g.N;
  if (i < 0 || i + N > tr.n()) throw InputError("window_stat: window out of range");
  const double* y = tr.samples.data();
  if (!hyp.has_change) {
    if (family_ == LocalTestFamily::TwoParam)
      return stat_fast(y, i, len, hyp.c_left, hyp.sd_left * hyp.sd_left);
    return stat_fast_lr(y, i, len, hyp.c_left) / sigma0_sq;
  }

  const double fs = k_->sample_rate();
  const long x = std::lround(hyp.tau * fs) - i;  // change offset within the window
  const double sL2 = hyp.sd_left * hyp.sd_left, sR2 = hyp.sd_right * hyp.sd_right;
  const double* p = y + i;

  if (family_ == LocalTestFamily::HomogeneousLR) {
    Eigen::VectorXd b(N), d(N);
    for (int q = 0; q < N; ++q) {
      const double base =
          hyp.c_left * (1.0 - g.step_l[q]) + hyp.c_right * g.step_r[q];
      const double st = k_->step_grid(static_cast<int>(q + 1 - x));
      const double c0 = hyp.c_left * (1.0 - st) + hyp.c_right * st;
      b[q] = p[q] - base;
      d[q] = base - c0;
    }
    const Eigen::VectorXd Mb = g.Minv * b;
    const double T = 2.0 * d.dot(Mb) + d.dot(g.Minv * d) + b.dot(g.lr_w.matrix()) *
                     b.dot(g.lr_w.matrix()) / g.lr_V;
    return T / sigma0_sq;
  }

  double s_vd = 0.0;
  Eigen::ArrayXd delta(N);
  for (int q = 0; q < N; ++q) {
    const double base = hyp.c_left * (1.0 - g.step_l[q]) + hyp.c_right * g.step_r[q];
    delta[q] = p[q] - base;
    s_vd += g.v[q] * delta[q];
  }
  const double c_hat = s_vd / g.V;
  const double num = (g.w0 * (delta - c_hat * g.v).square()).sum();
  const double B = sL2 * g.trGL + sR2 * g.trGR;
  const double s2_hat = std::max((num - B) / g.A, 0.0);

  double T = 0.0;
  for (int q = 0; q < N; ++q) {
    const double st = k_->step_grid(static_cast<int>(q + 1 - x));
    const double rho = k_->corr_grid(static_cast<int>(q + 1 - x), 0);
    const double c0 = hyp.c_left * (1.0 - st) + hyp.c_right * st;
    const double s02 = sL2 * (1.0 - rho) + sR2 * rho;
    if (!(s02 > 0.0)) return -kInf;
    double s12 = g.w0[q] * s2_hat + sL2 * g.gL0[q] + sR2 * g.gR0[q];
    s12 = std::max(s12, kVarFloor * s02);
    const double z0 = p[q] - c0;
    const double r1 = delta[q] - c_hat * g.v[q];
    T += std::log(s02 / s12) + z0 * z0 / s02 - r1 * r1 / s12;
  }
  return T;
}

CriticalValues LocalTester::calibrate(int n, double alpha2, int replications, uint64_t seed,
                                      int threads) const {
  if (n < l_max_ + m_) throw InputError("calibrate: trace too short for l_max");
  FilteredNoiseSampler sampler(*k_);
  Eigen::MatrixXd maxima(replications, l_max_);
  const bool lr = family_ == LocalTestFamily::HomogeneousLR;
  parallel_for(
      replications,
      [&](long rep) {
        Eigen::VectorXd y;
        sampler.sample(n, seed, static_cast<uint64_t>(rep), y);
        const double* p = y.data();
        for (int len = 1; len <= l_max_; ++len) {
          const int N = len + m_ - 1;
          double best = -kInf;
          const int last_start = n - N;
          for (int i = 0; i <= last_start; ++i) {
            const double t = lr ? stat_fast_lr(p, i, len, 0.0) : stat_fast(p, i, len, 0.0, 1.0);
            if (t > best) best = t;
          }
          maxima(rep, len - 1) = best;
        }
      },
      threads);

  std::vector<int> scales(l_max_);
  for (int l = 0; l < l_max_; ++l) scales[l] = l + 1;
  Eigen::VectorXd weights = Eigen::VectorXd::Constant(l_max_, 1.0 / l_max_);
  CriticalValues cv = balance_critical_values(maxima, scales, weights, alpha2);
  cv.family = lr ? "locallr" : "local2p";
  cv.n = n;
  cv.seed = seed;
  cv.kernel_fingerprint = k_->fingerprint_hex();
  return cv;
}

void LocalTester::window_estimates(const Trace& tr, int i, int len, const LocalHypothesis& hyp,
                                   double& level, double& sd) const {
  const Geometry& g = geo_[len - 1];
  const int N = g.N;
  const double* p = tr.samples.data() + i;
  double s_vd = 0.0;
  Eigen::ArrayXd delta(N);
  for (int q = 0; q < N; ++q) {
    const double base = hyp.c_left * (1.0 - g.step_l[q]) + hyp.c_right * g.step_r[q];
    delta[q] = p[q] - base;
    s_vd += g.v[q] * delta[q];
  }
  level = s_vd / g.V;
  const double num = (g.w0 * (delta - level * g.v).square()).sum();
  const double B = hyp.sd_left * hyp.sd_left * g.trGL + hyp.sd_right * hyp.sd_right * g.trGR;
  sd = std::sqrt(std::max((num - B) / g.A, 0.0));
}

std::vector<ShortEvent> LocalTester::scan(const Trace& tr, const Idealization& refit_ideal,
                                          const CriticalValues& cv, double sigma0_sq) const {
  const int n = tr.n();
  const double fs = tr.sample_rate;
  const char* want = family_ == LocalTestFamily::HomogeneousLR ? "locallr" : "local2p";
  if (cv.family != want)
    throw InputError("scan: critical values family '" + cv.family + "', expected '" +
                     std::string(want) + "'");
  if (cv.n != n) throw InputError("scan: critical values calibrated for different n");
  if (cv.kernel_fingerprint != k_->fingerprint_hex())
    throw InputError("scan: critical values calibrated for a different filter");
  if (static_cast<int>(cv.scales.size()) != l_max_)
    throw InputError("scan: critical values cover a different l_max");

  const auto& sig = refit_ideal.signal;
  const int K = sig.num_changes();
  std::vector<long> gpos(K);
  for (int c = 0; c < K; ++c) gpos[c] = std::lround(sig.change_times[c] * fs);

  const double* y = tr.samples.data();
  std::vector<ShortEvent> events;

  // Current cluster of rejections: windows [i, i+len] covering a contiguous
  // run of grid positions with no uncovered position in between.
  struct Best {
    double stat;
    int i, len;
    LocalHypothesis hyp;
  };
  bool open = false;
  long cover_end = 0;
  Best best{};
  auto flush = [&]() {
    if (!open) return;
    ShortEvent ev;
    ev.tau_left = best.i / fs;
    ev.tau_right = (best.i + best.len) / fs;
    ev.statistic = best.stat;
    window_estimates(tr, best.i, best.len, best.hyp, ev.level, ev.sd);
    ev.replaces_change = best.hyp.has_change;
    ev.replaced_tau = best.hyp.tau;
    events.push_back(ev);
    open = false;
  };

  int lo_ptr = 0;  // first change with gpos >= i - m + 1
  const int max_start = n - m_;  // len = 1 needs observations i+1 .. i+m
  for (int i = 0; i <= max_start; ++i) {
    const long ext_lo = i - m_ + 1;
    while (lo_ptr < K && gpos[lo_ptr] < ext_lo) ++lo_ptr;
    const int len_cap = std::min(l_max_, n - i - m_ + 1);
    // changes with gpos in [ext_lo, i + len + m - 1] as len grows
    for (int len = 1; len <= len_cap; ++len) {
      const long ext_hi = i + len + m_ - 1;
      int hi_ptr = lo_ptr;
      while (hi_ptr < K && gpos[hi_ptr] <= ext_hi) ++hi_ptr;
      const int count = hi_ptr - lo_ptr;
      if (count >= 2) continue;

      LocalHypothesis hyp;
      hyp.tau_left = i / fs;
      hyp.tau_right = (i + len) / fs;
      hyp.first_obs = i + 1;
      hyp.last_obs = i + len + m_ - 1;
      double T;
      if (count == 0) {
        const int seg = lo_ptr;
        hyp.c_left = hyp.c_right = sig.levels[seg];
        hyp.sd_left = hyp.sd_right = sig.sds[seg];
        T = family_ == LocalTestFamily::TwoParam
                ? stat_fast(y, i, len, hyp.c_left, hyp.sd_left * hyp.sd_left)
                : stat_fast_lr(y, i, len, hyp.c_left) / sigma0_sq;
      } else {
        hyp.has_change = true;
        hyp.tau = sig.change_times[lo_ptr];
        hyp.c_left = sig.levels[lo_ptr];
        hyp.c_right = sig.levels[lo_ptr + 1];
        hyp.sd_left = sig.sds[lo_ptr];
        hyp.sd_right = sig.sds[lo_ptr + 1];
        T = window_stat(tr, i, len, hyp, sigma0_sq);
      }
      if (!(T > cv.q[len - 1])) continue;

      if (open && i > cover_end + 1) flush();
      if (!open) {
        open = true;
        cover_end = i + len;
        best = {T, i, len, hyp};
      } else {
        cover_end = std::max(cover_end, static_cast<long>(i + len));
        if (T > best.stat) best = {T, i, len, hyp};
      }
    }
  }
  flush();
  return events;
}

Idealization apply_events(const Idealization& refit_ideal, const std::vector<ShortEvent>& events,
                          double sample_rate) {
  const auto& sig = refit_ideal.signal;
  const int K = sig.num_changes();
  if (events.empty()) return refit_ideal;

  // Rank events by statistic for claiming replaced changes; a change may be
  // replaced by at most one event.
  std::vector<int> claimed_by(K, -1);
  std::vector<size_t> order(events.size());
  for (size_t e = 0; e < order.size(); ++e) order[e] = e;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return events[a].statistic > events[b].statistic;
  });
  std::vector<bool> replaces(events.size(), false);
  std::vector<int> replaced_idx(events.size(), -1);
  for (size_t e : order) {
    if (!events[e].replaces_change) continue;
    for (int c = 0; c < K; ++c) {
      if (claimed_by[c] < 0 && sig.change_times[c] == events[e].replaced_tau) {
        claimed_by[c] = static_cast<int>(e);
        replaces[e] = true;
        replaced_idx[e] = c;
        break;
      }
    }
  }

  std::vector<size_t> by_time(events.size());
  for (size_t e = 0; e < by_time.size(); ++e) by_time[e] = e;
  std::sort(by_time.begin(), by_time.end(), [&](size_t a, size_t b) {
    return events[a].tau_left < events[b].tau_left;
  });

  struct Edit {
    double time;
    double level_after;
    double sd_after;
    ChangeOrigin origin;
  };
  std::vector<Edit> edits;
  int oc = 0;  // next original change
  for (size_t e : by_time) {
    const ShortEvent& ev = events[e];
    while (oc < K && sig.change_times[oc] < ev.tau_left) {
      if (claimed_by[oc] < 0)
        edits.push_back({sig.change_times[oc], sig.levels[oc + 1], sig.sds[oc + 1],
                         refit_ideal.origins[oc]});
      ++oc;
    }
    double right_level, right_sd;
    if (replaces[e]) {
      right_level = sig.levels[replaced_idx[e] + 1];
      right_sd = sig.sds[replaced_idx[e] + 1];
    } else {
      const int seg = sig.segment_at(ev.tau_right);
      right_level = sig.levels[seg];
      right_sd = sig.sds[seg];
    }
    edits.push_back({ev.tau_left, ev.level, std::max(ev.sd, 0.0), ChangeOrigin::LocalTest});
    edits.push_back({ev.tau_right, right_level, right_sd, ChangeOrigin::LocalTest});
    // skip any claimed change that falls before the peak's right boundary
    while (oc < K && sig.change_times[oc] <= ev.tau_right) ++oc;
  }
  while (oc < K) {
    if (claimed_by[oc] < 0)
      edits.push_back({sig.change_times[oc], sig.levels[oc + 1], sig.sds[oc + 1],
                       refit_ideal.origins[oc]});
    ++oc;
  }

  Idealization out;
  out.signal.end_time = sig.end_time;
  const int K2 = static_cast<int>(edits.size());
  out.signal.change_times.resize(K2);
  out.signal.levels.resize(K2 + 1);
  out.signal.sds.resize(K2 + 1);
  out.signal.levels[0] = sig.levels[0];
  out.signal.sds[0] = sig.sds[0];
  out.origins.resize(K2);
  for (int c = 0; c < K2; ++c) {
    if (c > 0 && !(edits[c].time > edits[c - 1].time))
      throw NumericError("apply_events: event edits are not strictly ordered");
    out.signal.change_times[c] = edits[c].time;
    out.signal.levels[c + 1] = edits[c].level_after;
    out.signal.sds[c + 1] = edits[c].sd_after;
    out.origins[c] = edits[c].origin;
  }
  out.sync_flags();
  out.tests_rejected = refit_ideal.tests_rejected;
  return out;
}

}  // namespace hilde
