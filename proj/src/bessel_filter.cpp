#include "hilde/bessel_filter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "hilde/types.hpp"

namespace hilde {

namespace {

// Reversed Bessel polynomial coefficients, descending powers, monic.
// a[k] is the coefficient of s^{order-k}; a[0] = 1.
std::vector<double> reversed_bessel_coeffs(int order) {
  std::vector<double> a(order + 1);
  a[0] = 1.0;
  for (int k = 0; k < order; ++k)
    a[k + 1] = a[k] * (order + k + 1) * (order - k) / (2.0 * (k + 1));
  return a;
}

std::complex<double> horner(const std::vector<double>& coeffs, std::complex<double> z) {
  std::complex<double> v(0.0, 0.0);
  for (double c : coeffs) v = v * z + c;
  return v;
}

std::complex<double> horner_deriv(const std::vector<double>& coeffs, std::complex<double> z) {
  const int n = static_cast<int>(coeffs.size()) - 1;
  std::complex<double> v(0.0, 0.0);
  for (int k = 0; k < n; ++k) v = v * z + coeffs[k] * static_cast<double>(n - k);
  return v;
}

// |H(i w)|^2 for the all-pole prototype with unit DC gain.
double gain2(double w, const std::vector<std::complex<double>>& poles) {
  double num = 1.0, den = 1.0;
  for (const auto& p : poles) {
    num *= std::norm(p);
    den *= std::norm(std::complex<double>(0.0, w) - p);
  }
  return num / den;
}

}  // namespace

FilterKernel FilterKernel::make_bessel(int order, double cutoff_hz, double sample_rate_hz,
                                       double acf_threshold) {
  if (order < 1) throw InputError("make_bessel: order must be >= 1");
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < sample_rate_hz / 2.0))
    throw InputError("make_bessel: cutoff must lie in (0, sample_rate/2)");
  if (!(acf_threshold > 0.0 && acf_threshold < 1.0))
    throw InputError("make_bessel: acf_threshold must lie in (0, 1)");

  const auto coeffs = reversed_bessel_coeffs(order);

  // Prototype poles from the companion matrix of the monic polynomial.
  std::vector<std::complex<double>> proto(order);
  if (order == 1) {
    proto[0] = std::complex<double>(-coeffs[1], 0.0);
  } else {
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) companion(i, i - 1) = 1.0;
    for (int i = 0; i < order; ++i) companion(i, order - 1) = -coeffs[order - i];
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion, false);
    for (int i = 0; i < order; ++i) proto[i] = es.eigenvalues()[i];
  }

  // One Newton polish step, then check the residual.
  double scale = 0.0;
  for (double c : coeffs) scale = std::max(scale, std::abs(c));
  for (auto& p : proto) {
    const auto d = horner_deriv(coeffs, p);
    if (std::abs(d) > 0.0) p -= horner(coeffs, p) / d;
    const double residual = std::abs(horner(coeffs, p));
    if (!(residual < 1e-6 * scale)) {
      std::ostringstream msg;
      msg << "make_bessel: pole root finding did not converge, residual " << residual
          << " at pole (" << p.real() << ", " << p.imag() << ")";
      throw NumericError(msg.str());
    }
  }
  std::sort(proto.begin(), proto.end(), [](const auto& a, const auto& b) {
    if (a.real() != b.real()) return a.real() < b.real();
    return a.imag() < b.imag();
  });

  // -3 dB point of the prototype by bisection on |H(i w)|^2.
  double lo = 0.0, hi = 1.0;
  while (gain2(hi, proto) > 0.5) hi *= 2.0;
  for (int it = 0; it < 200 && (hi - lo) > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (gain2(mid, proto) > 0.5 ? lo : hi) = mid;
  }
  const double w3db = 0.5 * (lo + hi);

  FilterKernel k;
  k.order_ = order;
  k.cutoff_ = cutoff_hz;
  k.fs_ = sample_rate_hz;
  k.acf_threshold_ = acf_threshold;
  k.poles_.resize(order);
  const double w_scale = 2.0 * std::acos(-1.0) * cutoff_hz / w3db;
  for (int i = 0; i < order; ++i) k.poles_[i] = proto[i] * w_scale;

  // Partial fractions of H(s) = prod(-p_j) / prod(s - p_j).
  std::complex<double> dc(1.0, 0.0);
  for (const auto& p : k.poles_) dc *= -p;
  k.residues_.resize(order);
  for (int i = 0; i < order; ++i) {
    std::complex<double> den(1.0, 0.0);
    for (int j = 0; j < order; ++j)
      if (j != i) den *= k.poles_[i] - k.poles_[j];
    k.residues_[i] = dc / den;
  }

  // Truncation length: untruncated normalized autocorrelation below the
  // threshold at every integer lag >= m.  The envelope sum_ij
  // |r_i r_j/(p_i+p_j)| exp(max Re p * l) dominates |A(inf, l)|, giving a
  // sound stopping lag.
  double a0 = 0.0, envelope_c = 0.0, max_re = -1e300;
  for (int i = 0; i < order; ++i) {
    for (int j = 0; j < order; ++j) {
      const auto term = -k.residues_[i] * k.residues_[j] / (k.poles_[i] + k.poles_[j]);
      a0 += term.real();
      envelope_c += std::abs(term);
    }
    max_re = std::max(max_re, k.poles_[i].real());
  }
  auto acf_inf = [&](double l) {
    std::complex<double> s(0.0, 0.0);
    for (int i = 0; i < order; ++i)
      for (int j = 0; j < order; ++j)
        s -= k.residues_[i] * k.residues_[j] * std::exp(k.poles_[j] * l) /
             (k.poles_[i] + k.poles_[j]);
    return s.real();
  };
  int m = 1;
  for (int lag = 1;; ++lag) {
    if (lag > 1000000) throw NumericError("make_bessel: truncation search did not terminate");
    const double t = lag / sample_rate_hz;
    if (std::abs(acf_inf(t)) / a0 >= acf_threshold) m = lag + 1;
    if (envelope_c * std::exp(max_re * t) / a0 < acf_threshold && lag >= m) break;
  }
  k.m_ = m;

  k.rescale_ = 1.0;
  k.rescale_ = 1.0 / k.raw_step(m / sample_rate_hz);
  k.acf0_ = k.autocorr(k.truncation_time(), 0.0);
  k.build_caches();
  return k;
}

double FilterKernel::raw_kernel(double t) const {
  std::complex<double> s(0.0, 0.0);
  for (int i = 0; i < order_; ++i) s += residues_[i] * std::exp(poles_[i] * t);
  return s.real();
}

double FilterKernel::raw_step(double t) const {
  std::complex<double> s(0.0, 0.0);
  for (int i = 0; i < order_; ++i)
    s += residues_[i] / poles_[i] * (std::exp(poles_[i] * t) - 1.0);
  return s.real();
}

double FilterKernel::raw_autocorr_segment(double a, double b, double lag) const {
  // int_a^b F(s) F(s+lag) ds for the raw exponential-sum kernel.
  std::complex<double> s(0.0, 0.0);
  for (int i = 0; i < order_; ++i) {
    for (int j = 0; j < order_; ++j) {
      const auto pij = poles_[i] + poles_[j];
      s += residues_[i] * residues_[j] * std::exp(poles_[j] * lag) *
           (std::exp(pij * b) - std::exp(pij * a)) / pij;
    }
  }
  return s.real();
}

double FilterKernel::kernel(double t) const {
  const double T = truncation_time();
  if (t < 0.0 || t > T) return 0.0;
  return rescale_ * raw_kernel(t);
}

double FilterKernel::step_response(double t) const {
  const double T = truncation_time();
  if (t <= 0.0) return 0.0;
  if (t >= T) return 1.0;
  return rescale_ * raw_step(t);
}

double FilterKernel::autocorr(double t, double lag) const {
  const double T = truncation_time();
  if (t <= 0.0 || std::abs(lag) >= T) return 0.0;
  double a, b;
  if (lag >= 0.0) {
    a = 0.0;
    b = std::min(t, T - lag);
    if (b <= a) return 0.0;
  } else {
    a = -lag;
    b = std::min(t, T);
    if (b <= a) return 0.0;
  }
  return rescale_ * rescale_ * raw_autocorr_segment(a, b, lag);
}

void FilterKernel::build_caches() {
  step_cache_.assign(m_ + 1, 0.0);
  for (int kk = 0; kk <= m_; ++kk) step_cache_[kk] = step_response(kk / fs_);
  corr_cache_.setZero(m_ + 1, 2 * m_ + 1);
  for (int kk = 0; kk <= m_; ++kk)
    for (int r = -m_; r <= m_; ++r)
      corr_cache_(kk, r + m_) = corr(kk / fs_, r / fs_);
}

std::string FilterKernel::serialize() const {
  std::ostringstream out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "hilde_filter_v1\n";
  out << "order " << order_ << "\n";
  out << "cutoff_hz " << num(cutoff_) << "\n";
  out << "sample_rate_hz " << num(fs_) << "\n";
  out << "acf_threshold " << num(acf_threshold_) << "\n";
  out << "m " << m_ << "\n";
  out << "rescale " << num(rescale_) << "\n";
  for (int i = 0; i < order_; ++i)
    out << "pole " << num(poles_[i].real()) << " " << num(poles_[i].imag()) << "\n";
  for (int i = 0; i < order_; ++i)
    out << "residue " << num(residues_[i].real()) << " " << num(residues_[i].imag()) << "\n";
  return out.str();
}

FilterKernel FilterKernel::deserialize(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header != "hilde_filter_v1")
    throw InputError("filter record: bad header");
  FilterKernel k;
  std::string key;
  double re, im;
  while (in >> key) {
    if (key == "order")
      in >> k.order_;
    else if (key == "cutoff_hz")
      in >> k.cutoff_;
    else if (key == "sample_rate_hz")
      in >> k.fs_;
    else if (key == "acf_threshold")
      in >> k.acf_threshold_;
    else if (key == "m")
      in >> k.m_;
    else if (key == "rescale")
      in >> k.rescale_;
    else if (key == "pole") {
      in >> re >> im;
      k.poles_.emplace_back(re, im);
    } else if (key == "residue") {
      in >> re >> im;
      k.residues_.emplace_back(re, im);
    } else {
      throw InputError("filter record: unknown key '" + key + "'");
    }
  }
  if (static_cast<int>(k.poles_.size()) != k.order_ ||
      static_cast<int>(k.residues_.size()) != k.order_ || k.m_ < 1)
    throw InputError("filter record: inconsistent contents");
  k.acf0_ = k.autocorr(k.truncation_time(), 0.0);
  k.build_caches();
  return k;
}

uint64_t FilterKernel::fingerprint() const {
  const std::string s = serialize();
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string FilterKernel::fingerprint_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fingerprint()));
  return buf;
}

}  // namespace hilde
