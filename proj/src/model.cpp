#include "hilde/model.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <sstream>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "hilde/rng.hpp"

namespace hilde {

double expectation(const PiecewiseSignal& sig, const FilterKernel& k, int i) {
  const double t = i / k.sample_rate();
  const double reach = t - k.truncation_time();
  int j = sig.segment_at(t);
  double acc = 0.0;
  // Walk left over segments intersecting (t - m/fs, t]; earlier ones see a
  // fully saturated step difference of zero.
  for (;; --j) {
    const double hi = (j == sig.num_changes()) ? t + 1.0 : sig.change_times[j];
    const double lo = (j == 0) ? reach - 1.0 : sig.change_times[j - 1];
    const double w_hi = (j == sig.num_changes()) ? 0.0 : k.step_response(t - hi);
    const double w_lo = k.step_response(t - lo);
    acc += sig.levels[j] * (w_lo - w_hi);
    if (j == 0 || lo <= reach) break;
  }
  return acc;
}

double covariance(const PiecewiseSignal& sig, const FilterKernel& k, int i, int j_offset) {
  if (std::abs(j_offset) > k.m()) return 0.0;
  const double t = i / k.sample_rate();
  const double lag = j_offset / k.sample_rate();
  const double reach = t - k.truncation_time();
  int j = sig.segment_at(t);
  const double T = k.truncation_time();
  double acc = 0.0;
  for (;; --j) {
    const double hi = (j == sig.num_changes()) ? t + 1.0 : sig.change_times[j];
    const double lo = (j == 0) ? reach - 1.0 : sig.change_times[j - 1];
    const double c_hi = (j == sig.num_changes()) ? 0.0 : k.corr(std::min(t - hi, T), lag);
    const double c_lo = k.corr(std::min(t - lo, T), lag);
    const double s = sig.sds[j];
    acc += s * s * (c_lo - c_hi);
    if (j == 0 || lo <= reach) break;
  }
  return acc;
}

namespace {

// Per-sample discrete noise variance of the fine-grid convolution, exact for
// piecewise constant sigma: segment sums of tap products plus boundary
// corrections for the MA cross term.
struct FineVariance {
  const PiecewiseSignal& sig;
  double dt;                  // fine cell width
  Eigen::VectorXd q2_prefix;  // prefix sums of q_c^2
  Eigen::VectorXd qq_prefix;  // prefix sums of q_c q_{c+1}
  const Eigen::VectorXd& q;
  double ma0, ma1;

  double at(long io, double ti) const {
    const int mo = static_cast<int>(q.size());
    const double ma_var = ma0 * ma0 + ma1 * ma1;
    const double ma_cross = 2.0 * ma0 * ma1;
    double var = 0.0;
    int j = sig.segment_at(ti);
    long c_lo = 0;
    for (;; --j) {
      // sigma = sds[j] on fine offsets c with (io - c) dt in [tau_j, tau_{j+1})
      long c_hi;
      if (j == 0) {
        c_hi = mo - 1;
      } else {
        const double a = io - sig.change_times[j - 1] / dt;  // c > ... boundary
        c_hi = std::min<long>(mo - 1, static_cast<long>(std::floor(a)));
        // guard against roundoff at on-grid boundaries
        while (c_hi >= c_lo && (io - c_hi) * dt < sig.change_times[j - 1]) --c_hi;
        while (c_hi + 1 <= mo - 1 && (io - (c_hi + 1)) * dt >= sig.change_times[j - 1]) ++c_hi;
      }
      if (c_hi >= c_lo) {
        const double s2 = sig.sds[j] * sig.sds[j];
        var += ma_var * s2 * (q2_prefix[c_hi + 1] - q2_prefix[c_lo]);
        if (ma_cross != 0.0) {
          // pairs (c, c+1) with both cells in segment j
          const long p_hi = std::min<long>(c_hi, mo - 2);
          if (p_hi >= c_lo) var += ma_cross * s2 * (qq_prefix[p_hi + 1] - qq_prefix[c_lo]);
          // boundary pair straddling segments j and j+1 (cell c_lo-1 is later in time)
          if (c_lo > 0) {
            const int jn = sig.segment_at((io - (c_lo - 1)) * dt);
            var += ma_cross * sig.sds[j] * sig.sds[jn] * q[c_lo - 1] * q[c_lo];
          }
        }
      }
      if (j == 0 || c_hi >= mo - 1) break;
      c_lo = c_hi + 1;
    }
    return var;
  }
};

}  // namespace

Trace simulate(const PiecewiseSignal& sig, const FilterKernel& k, int n, int oversampling,
               uint64_t seed) {
  SimulateOptions opt;
  opt.oversampling = oversampling;
  return simulate(sig, k, n, opt, seed);
}

Trace simulate(const PiecewiseSignal& sig, const FilterKernel& k, int n,
               const SimulateOptions& opt, uint64_t seed) {
  sig.validate(false);
  if (n < 1) throw InputError("simulate: need n >= 1");
  if (opt.oversampling < 1) throw InputError("simulate: oversampling must be >= 1");
  const int o = opt.oversampling;
  const double fs = k.sample_rate();
  const double dt = 1.0 / (o * fs);
  const int mo = k.m() * o;

  // Kernel taps at fine-cell midpoints, normalized to sum one.
  Eigen::VectorXd q(mo);
  for (int c = 0; c < mo; ++c) q[c] = k.kernel((c + 0.5) * dt);
  q /= q.sum();
  Eigen::VectorXd qflip(mo);
  for (int c = 0; c < mo; ++c) qflip[c] = q[mo - 1 - c];

  FineVariance fine_var{sig, dt, Eigen::VectorXd(mo + 1), Eigen::VectorXd(mo), q,
                        opt.ma0, opt.ma1};
  fine_var.q2_prefix[0] = 0.0;
  for (int c = 0; c < mo; ++c) fine_var.q2_prefix[c + 1] = fine_var.q2_prefix[c] + q[c] * q[c];
  fine_var.qq_prefix[0] = 0.0;
  for (int c = 0; c + 1 < mo; ++c)
    fine_var.qq_prefix[c + 1] = fine_var.qq_prefix[c] + q[c] * q[c + 1];

  GaussianSampler gauss(seed, 0);
  // Sliding buffer of scaled fine noise; F[0..mo-1] covers fine indices
  // i*o-mo+1 .. i*o once sample i is current.
  Eigen::VectorXd F(mo);
  double z_prev = gauss.next();
  long g = o - mo + 1;  // prefill ends at fine index o, sample 1's window
  auto push_fine = [&](double* dst, long gfine) {
    const double z = gauss.next();
    const double w = opt.ma0 * z + opt.ma1 * z_prev;
    z_prev = z;
    *dst = sig.sd_at(gfine * dt) * w;
  };
  for (int c = 0; c < mo; ++c, ++g) push_fine(F.data() + c, g);

  Trace tr;
  tr.samples.resize(n);
  tr.sample_rate = fs;
  for (int i = 1; i <= n; ++i) {
    if (i > 1) {
      std::memmove(F.data(), F.data() + o, sizeof(double) * (mo - o));
      for (int c = mo - o; c < mo; ++c, ++g) push_fine(F.data() + c, g);
    }
    const double eps = F.dot(qflip);
    const double ti = i / fs;
    const double var_exact = covariance(sig, k, i, 0);
    const double var_disc = fine_var.at(static_cast<long>(i) * o, ti);
    const double scale = (var_disc > 0.0 && var_exact > 0.0)
                             ? std::sqrt(var_exact / var_disc)
                             : 0.0;
    tr.samples[i - 1] = expectation(sig, k, i) + scale * eps;
  }

  if (opt.add_pink) {
    double f_lo = opt.pink_f_lo, f_hi = opt.pink_f_hi;
    tr.samples += pink_noise(n, fs, opt.pink_sd, f_lo, f_hi, seed, /*stream=*/1);
  }

  std::ostringstream prov;
  prov << "simulated(seed=" << seed;
  if (opt.ma1 != 0.0 || opt.ma0 != 1.0) prov << ",ma=" << opt.ma0 << "/" << opt.ma1;
  if (opt.add_pink) prov << ",pink_sd=" << opt.pink_sd;
  prov << ")";
  tr.provenance = prov.str();
  return tr;
}

PiecewiseSignal simulate_hmm(const HmmSpec& spec, double duration, uint64_t seed,
                             int start_state) {
  spec.validate();
  if (!(duration > 0.0)) throw InputError("simulate_hmm: duration must be positive");
  if (start_state < 0 || start_state >= spec.num_states())
    throw InputError("simulate_hmm: bad start state");

  Xoshiro256 rng(seed, 0);
  std::vector<double> taus, levels, sds;
  int state = start_state;
  double t = 0.0;
  levels.push_back(spec.state_means[state]);
  sds.push_back(spec.state_sds[state]);
  while (true) {
    const double dwell = -std::log(rng.uniform_pos()) / spec.dwell_rates[state];
    t += dwell;
    if (t >= duration) break;
    // next state from the embedded chain
    const double u = rng.uniform();
    double cum = 0.0;
    int next = spec.num_states() - 1;
    for (int s = 0; s < spec.num_states(); ++s) {
      cum += spec.transition_probs(state, s);
      if (u < cum) {
        next = s;
        break;
      }
    }
    if (spec.state_means[next] != spec.state_means[state]) {
      taus.push_back(t);
      levels.push_back(spec.state_means[next]);
      sds.push_back(spec.state_sds[next]);
    }
    state = next;
  }

  PiecewiseSignal sig;
  sig.change_times = Eigen::Map<Eigen::VectorXd>(taus.data(), taus.size());
  sig.levels = Eigen::Map<Eigen::VectorXd>(levels.data(), levels.size());
  sig.sds = Eigen::Map<Eigen::VectorXd>(sds.data(), sds.size());
  sig.end_time = duration;
  return sig;
}

Trace add_contamination(const Trace& tr, const FilterKernel& k, ContaminationKind kind,
                        const ContaminationParams& params, uint64_t seed) {
  SimulateOptions opt;
  opt.oversampling = params.oversampling;
  if (kind == ContaminationKind::Violet) {
    opt.noise = FineNoiseKind::VioletMA;
    opt.ma0 = params.ma0;
    opt.ma1 = params.ma1;
    return simulate(params.signal, k, tr.n(), opt, seed);
  }
  if (!(params.pink_sd > 0.0)) throw InputError("add_contamination: pink_sd must be positive");
  PiecewiseSignal damped = params.signal;
  damped.sds *= params.background_factor;
  opt.add_pink = true;
  opt.pink_sd = params.pink_sd;
  opt.pink_f_lo = params.pink_f_lo;
  opt.pink_f_hi = params.pink_f_hi;
  return simulate(damped, k, tr.n(), opt, seed);
}

FilteredNoiseSampler::FilteredNoiseSampler(const FilterKernel& k) {
  const int m = k.m();
  Eigen::VectorXd gamma(m + 1);
  for (int r = 0; r <= m; ++r) gamma[r] = k.corr_inf(r);

  // Banded Cholesky of the stationary Toeplitz covariance; rows converge
  // geometrically to the moving-average factorization.
  const int bw = m + 1;
  std::vector<Eigen::VectorXd> rows;  // rows[i % bw][c] = L[i][i-m+c]
  rows.assign(bw, Eigen::VectorXd::Zero(bw));
  Eigen::VectorXd prev = Eigen::VectorXd::Zero(bw);
  const int max_rows = 20000;
  int i = 0;
  for (; i < max_rows; ++i) {
    Eigen::VectorXd& row = rows[i % bw];
    row.setZero();
    for (int j = std::max(0, i - m); j <= i; ++j) {
      const Eigen::VectorXd& rj = rows[j % bw];
      double s = gamma[i - j];
      const int lo = std::max(0, i - m);
      for (int t = std::max(lo, j - m); t < j; ++t)
        s -= row[t - (i - m)] * rj[t - (j - m)];
      if (j < i) {
        row[j - (i - m)] = s / rj[m];
      } else {
        if (!(s > 0.0))
          throw NumericError("FilteredNoiseSampler: covariance not positive definite");
        row[m] = std::sqrt(s);
      }
    }
    if (i > m && (row - prev).cwiseAbs().maxCoeff() < 1e-15) break;
    prev = row;
  }
  if (i == max_rows) throw NumericError("FilteredNoiseSampler: band did not converge");
  band_ = rows[i % bw];
}

void FilteredNoiseSampler::sample(int n, uint64_t seed, uint64_t stream,
                                  Eigen::VectorXd& out) const {
  const int m = static_cast<int>(band_.size()) - 1;
  GaussianSampler gauss(seed, stream);
  Eigen::VectorXd z(n + m);
  for (int i = 0; i < n + m; ++i) z[i] = gauss.next();
  out.resize(n);
  for (int i = 0; i < n; ++i) out[i] = band_.dot(z.segment(i, m + 1));
}

Eigen::VectorXd pink_noise(int n, double sample_rate, double target_sd, double f_lo,
                           double f_hi, uint64_t seed, uint64_t stream) {
  if (n < 2) throw InputError("pink_noise: need n >= 2");
  int n2 = 2;
  while (n2 < n) n2 *= 2;
  if (f_lo <= 0.0) f_lo = sample_rate / n2;
  if (f_hi <= 0.0) f_hi = sample_rate / 2.0;

  Xoshiro256 rng(seed, 0x9e3779b9u + stream);
  std::vector<std::complex<double>> spec(n2, {0.0, 0.0});
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int j = 1; j <= n2 / 2; ++j) {
    const double f = j * sample_rate / n2;
    const double phi = two_pi * rng.uniform();
    if (f < f_lo || f > f_hi) continue;
    const double amp = 1.0 / std::sqrt(f);
    if (j == n2 / 2) {
      spec[j] = {amp * std::cos(phi), 0.0};
    } else {
      spec[j] = std::polar(amp, phi);
      spec[n2 - j] = std::conj(spec[j]);
    }
  }
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> time(n2);
  fft.inv(time, spec);
  Eigen::VectorXd x(n);
  for (int i = 0; i < n; ++i) x[i] = time[i].real();
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().mean());
  if (!(sd > 0.0)) throw NumericError("pink_noise: degenerate spectrum");
  return (x.array() - mean).matrix() * (target_sd / sd);
}

}  // namespace hilde
