#ifndef HILDE_MODEL_HPP
#define HILDE_MODEL_HPP

#include <cstdint>

#include "hilde/bessel_filter.hpp"
#include "hilde/types.hpp"

namespace hilde {

/// E[Y_i] for sample i (1-based): the signal convolved with the truncated
/// kernel, evaluated exactly through the step response.
double expectation(const PiecewiseSignal& sig, const FilterKernel& k, int i);

/// Cov[Y_i, Y_{i+j_offset}], exactly zero for |j_offset| > m.  Segment sds
/// are observation-scale: a deep homogeneous stretch has Var[Y_i] = s^2.
double covariance(const PiecewiseSignal& sig, const FilterKernel& k, int i, int j_offset);

enum class FineNoiseKind { White, VioletMA };

struct SimulateOptions {
  int oversampling = 100;
  FineNoiseKind noise = FineNoiseKind::White;
  // Moving-average coefficients applied to the fine-grid white noise before
  // convolution (violet contamination); (1, 0) is plain white noise.
  double ma0 = 1.0;
  double ma1 = 0.0;
  // Optional global 1/f component added to the decimated trace.
  bool add_pink = false;
  double pink_sd = 0.0;
  double pink_f_lo = 0.0;  // 0 -> fundamental of the synthesis length
  double pink_f_hi = 0.0;  // 0 -> Nyquist
};

/// Samples a trace: exact expectation plus oversampled white noise scaled by
/// sigma, discretely convolved with the kernel on the fine grid, decimated,
/// and rescaled per sample to the exact model standard deviation.
/// Deterministic given the seed.
Trace simulate(const PiecewiseSignal& sig, const FilterKernel& k, int n, int oversampling,
               uint64_t seed);
Trace simulate(const PiecewiseSignal& sig, const FilterKernel& k, int n,
               const SimulateOptions& opt, uint64_t seed);

/// Continuous-time Markov gating trajectory; consecutive states with equal
/// means are merged into single segments.
PiecewiseSignal simulate_hmm(const HmmSpec& spec, double duration, uint64_t seed,
                             int start_state = 0);

enum class ContaminationKind { Violet, Pink };

struct ContaminationParams {
  PiecewiseSignal signal;  // generating signal of the trace being contaminated
  int oversampling = 100;
  // violet: MA coefficients on the fine-grid noise
  double ma0 = 0.8;
  double ma1 = -0.6;
  // pink: the original white-noise sds are multiplied by background_factor
  // and a global 1/f component with standard deviation pink_sd is added
  double pink_sd = 0.0;
  double pink_f_lo = 0.0;
  double pink_f_hi = 0.0;
  double background_factor = 0.5;
};

/// Re-simulates the trace under the requested contamination protocol (both
/// kinds act on the noise generation, so the generating signal is required).
Trace add_contamination(const Trace& tr, const FilterKernel& k, ContaminationKind kind,
                        const ContaminationParams& params, uint64_t seed);

/// Exact sampler for the stationary filtered-noise process (unit sd constant
/// signal): a moving-average band obtained from the converged Cholesky rows
/// of the banded Toeplitz covariance.  Used by the Monte-Carlo calibrations.
class FilteredNoiseSampler {
 public:
  explicit FilteredNoiseSampler(const FilterKernel& k);
  /// Fills out[0..n-1]; stream selects the replication.
  void sample(int n, uint64_t seed, uint64_t stream, Eigen::VectorXd& out) const;
  const Eigen::VectorXd& band() const { return band_; }

 private:
  Eigen::VectorXd band_;  // coefficients for lags m..0
};

/// Global 1/f noise by spectral synthesis (random phases, 1/sqrt(f)
/// amplitudes), scaled to the exact target standard deviation.
Eigen::VectorXd pink_noise(int n, double sample_rate, double target_sd, double f_lo,
                           double f_hi, uint64_t seed, uint64_t stream = 0);

}  // namespace hilde

#endif
