#ifndef HILDE_BESSEL_FILTER_HPP
#define HILDE_BESSEL_FILTER_HPP

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hilde {

/// Analytic representation of a truncated analogue all-pole lowpass filter.
///
/// The impulse response is a residue-weighted sum of complex exponentials,
///   F(t) = Re sum_i r_i exp(p_i t),  t >= 0,
/// truncated at T = m/fs and rescaled so the truncated kernel integrates to
/// one.  Kernel, antiderivative (step response) and the running
/// autocorrelation
///   A_m(t, l) = int_0^t F_m(s) F_m(s + l) ds
/// are all evaluated in closed form at arbitrary real arguments, so model
/// covariances are exact.  Immutable after construction; all evaluations are
/// pure and safe to share across threads.
class FilterKernel {
 public:
  /// Builds an order-pole Bessel lowpass with the given -3 dB cutoff.
  ///
  /// Poles are the roots of the reversed Bessel polynomial (companion-matrix
  /// eigenvalues, one Newton polish), frequency-scaled so |H(i w)|^2 = 1/2 at
  /// w = 2 pi cutoff.  The truncation length m is the smallest integer such
  /// that the normalized autocorrelation of the untruncated filter stays
  /// below acf_threshold from lag m/fs on.
  static FilterKernel make_bessel(int order, double cutoff_hz, double sample_rate_hz,
                                  double acf_threshold = 1e-3);

  /// Truncated, rescaled kernel; zero outside [0, m/fs].
  double kernel(double t) const;

  /// Antiderivative of kernel(): 0 for t <= 0, exactly 1 for t >= m/fs.
  double step_response(double t) const;

  /// A_m(t, lag): zero whenever t <= 0 or |lag| >= m/fs.
  double autocorr(double t, double lag) const;

  /// A_m(inf, 0) = integral of the squared truncated kernel.
  double acf0() const { return acf0_; }

  /// Autocorrelation normalized to corr(inf, 0) = 1; this is the sampled
  /// noise correlation scale used throughout the model.
  double corr(double t, double lag) const { return autocorr(t, lag) / acf0_; }

  // Grid caches for loops over integer sample offsets (arguments k/fs, r/fs).
  // Out-of-range k saturates: k <= 0 gives 0 (and the step 0), k >= m gives
  // the t = infinity value (and the step 1).
  double step_grid(int k) const {
    if (k <= 0) return 0.0;
    if (k >= m_) return 1.0;
    return step_cache_[k];
  }
  double corr_grid(int k, int r) const {
    if (k <= 0 || r <= -m_ || r >= m_) return 0.0;
    if (k > m_) k = m_;
    return corr_cache_(k, r + m_);
  }
  /// corr(inf, r/fs).
  double corr_inf(int r) const { return corr_grid(m_, r); }

  int order() const { return order_; }
  double cutoff() const { return cutoff_; }
  double sample_rate() const { return fs_; }
  int m() const { return m_; }
  double truncation_time() const { return m_ / fs_; }
  double rescale() const { return rescale_; }
  double acf_threshold() const { return acf_threshold_; }
  const std::vector<std::complex<double>>& poles() const { return poles_; }
  const std::vector<std::complex<double>>& residues() const { return residues_; }

  /// Self-describing text record for reproducibility manifests.
  std::string serialize() const;
  static FilterKernel deserialize(std::istream& in);

  /// FNV-1a hash of the serialized record, printed as 16 hex digits.
  uint64_t fingerprint() const;
  std::string fingerprint_hex() const;

 private:
  FilterKernel() = default;
  void build_caches();

  // Untruncated closed forms on the raw (unrescaled) kernel.
  double raw_kernel(double t) const;
  double raw_step(double t) const;
  double raw_autocorr_segment(double a, double b, double lag) const;

  int order_ = 0;
  double cutoff_ = 0.0;
  double fs_ = 0.0;
  double acf_threshold_ = 0.0;
  int m_ = 0;
  double rescale_ = 1.0;
  double acf0_ = 0.0;
  std::vector<std::complex<double>> poles_;
  std::vector<std::complex<double>> residues_;

  std::vector<double> step_cache_;  // k = 0..m
  Eigen::MatrixXd corr_cache_;      // rows k = 0..m, cols r = -m..m
};

}  // namespace hilde

#endif
