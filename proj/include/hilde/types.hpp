#ifndef HILDE_TYPES_HPP
#define HILDE_TYPES_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace hilde {

// Error taxonomy mapped to CLI exit codes: input 2, calibration 3, numeric 4.
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Piecewise constant conductance level and noise standard deviation sharing
/// change times.  Segment k covers [tau_k, tau_{k+1}) with tau_0 = -inf and
/// tau_{K+1} = end_time.
struct PiecewiseSignal {
  Eigen::VectorXd change_times;  // tau_1..tau_K, strictly increasing
  Eigen::VectorXd levels;        // c_0..c_K (nS)
  Eigen::VectorXd sds;           // s_0..s_K (nS)
  double end_time = 0.0;

  int num_changes() const { return static_cast<int>(change_times.size()); }
  int num_segments() const { return num_changes() + 1; }

  /// Index k of the segment containing time t.
  int segment_at(double t) const;
  double level_at(double t) const { return levels[segment_at(t)]; }
  double sd_at(double t) const { return sds[segment_at(t)]; }

  /// Throws InputError on malformed data.  Estimator outputs must have
  /// distinct adjacent levels; simulation inputs may relax that (e.g. a
  /// variance-only change under a constant mean).
  void validate(bool require_distinct_levels = true) const;
};

/// Equidistant samples Y_1..Y_n at `sample_rate`; sample i sits at time i/fs.
struct Trace {
  Eigen::VectorXd samples;
  double sample_rate = 0.0;
  std::string provenance;

  int n() const { return static_cast<int>(samples.size()); }
};

/// Continuous-time Markov gating model used by the simulator.
struct HmmSpec {
  Eigen::VectorXd state_means;       // nS
  Eigen::VectorXd state_sds;        // nS
  Eigen::VectorXd dwell_rates;      // Hz
  Eigen::MatrixXd transition_probs;  // row-stochastic, zero diagonal

  int num_states() const { return static_cast<int>(state_means.size()); }
  void validate() const;
};

enum class ChangeOrigin { Multiresolution, LocalTest };

/// Fitted signal plus detection provenance and fit diagnostics.
struct Idealization {
  PiecewiseSignal signal;
  std::vector<ChangeOrigin> origins;  // one per change
  std::vector<bool> deconvolved;      // one per change: refined below the grid
  Eigen::VectorXd segment_residual_sd;
  std::vector<bool> sd_inherited;     // one per segment
  int tests_rejected = 0;

  void sync_flags();  // resizes per-change/per-segment vectors to the signal
};

const char* to_string(ChangeOrigin o);

}  // namespace hilde

#endif
