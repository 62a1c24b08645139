#ifndef HILDE_CRITICAL_VALUES_HPP
#define HILDE_CRITICAL_VALUES_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hilde {

/// Scale-dependent critical values from Monte-Carlo calibration, with the
/// metadata needed to key a cache entry.
struct CriticalValues {
  std::string family;       // "jsmurf" | "local2p" | "locallr"
  std::vector<int> scales;  // interval / window lengths in samples
  Eigen::VectorXd q;        // one threshold per scale
  Eigen::VectorXd weights;  // beta_l, sums to one
  double alpha = 0.0;
  double lambda = 0.0;      // balancing parameter found by bisection
  double achieved_level = 0.0;

  int replications = 0;
  int n = 0;
  uint64_t seed = 0;
  std::string kernel_fingerprint;

  double q_for(int scale) const;  // exact scale lookup

  std::string cache_key() const;
  std::string serialize() const;
  static CriticalValues deserialize(std::istream& in);
};

/// Chooses per-scale thresholds q_l as empirical (1 - lambda beta_l)-quantiles
/// of the per-replication per-scale maxima in M (replications x scales),
/// with lambda found by bisection so the fraction of replications exceeding
/// any q_l equals alpha up to 1/R.
CriticalValues balance_critical_values(const Eigen::MatrixXd& maxima,
                                       const std::vector<int>& scales,
                                       const Eigen::VectorXd& weights, double alpha);

}  // namespace hilde

#endif
