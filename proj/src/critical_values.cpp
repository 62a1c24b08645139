#include "hilde/critical_values.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <sstream>

#include "hilde/types.hpp"

namespace hilde {

double CriticalValues::q_for(int scale) const {
  for (size_t l = 0; l < scales.size(); ++l)
    if (scales[l] == scale) return q[l];
  throw InputError("CriticalValues: no threshold for scale " + std::to_string(scale));
}

namespace {

// Type-1 empirical quantile: k-th order statistic with k = ceil(p R).
int quantile_index(double p, int R) {
  int k = static_cast<int>(std::ceil(p * R));
  return std::clamp(k, 1, R);
}

}  // namespace

CriticalValues balance_critical_values(const Eigen::MatrixXd& maxima,
                                       const std::vector<int>& scales,
                                       const Eigen::VectorXd& weights, double alpha) {
  const int R = static_cast<int>(maxima.rows());
  const int S = static_cast<int>(maxima.cols());
  if (S != static_cast<int>(scales.size()) || weights.size() != S)
    throw InputError("balance_critical_values: shape mismatch");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("balance_critical_values: bad alpha");
  if (std::floor(alpha * R) < 1.0) {
    std::ostringstream msg;
    msg << "calibration cannot reach level " << alpha << " with " << R
        << " replications (achievable resolution " << 1.0 / R << ")";
    throw CalibrationError(msg.str());
  }

  std::vector<Eigen::VectorXd> sorted(S);
  for (int l = 0; l < S; ++l) {
    sorted[l] = maxima.col(l);
    std::sort(sorted[l].data(), sorted[l].data() + R);
  }

  auto thresholds = [&](double lambda, Eigen::VectorXd& q) {
    for (int l = 0; l < S; ++l)
      q[l] = sorted[l][quantile_index(1.0 - lambda * weights[l], R) - 1];
  };
  auto exceedances = [&](const Eigen::VectorXd& q) {
    int count = 0;
    for (int r = 0; r < R; ++r)
      for (int l = 0; l < S; ++l)
        if (maxima(r, l) > q[l]) {
          ++count;
          break;
        }
    return count;
  };

  // Exceedance is nondecreasing in lambda; bisect for the largest lambda
  // whose family-wise exceedance count stays at or below floor(alpha R).
  const int target = static_cast<int>(std::floor(alpha * R));
  double lo = 0.0, hi = weights.minCoeff() > 0.0 ? 1.0 / weights.minCoeff() : 1.0;
  Eigen::VectorXd q(S);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    thresholds(mid, q);
    (exceedances(q) <= target ? lo : hi) = mid;
  }
  thresholds(lo, q);

  CriticalValues cv;
  cv.scales = scales;
  cv.q = q;
  cv.weights = weights;
  cv.alpha = alpha;
  cv.lambda = lo;
  cv.achieved_level = static_cast<double>(exceedances(q)) / R;
  cv.replications = R;
  return cv;
}

std::string CriticalValues::cache_key() const {
  std::ostringstream out;
  out << family << "_n" << n << "_k" << kernel_fingerprint << "_a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", alpha);
  out << buf << "_R" << replications << "_s" << seed << "_S" << scales.size();
  if (!scales.empty()) out << "_" << scales.front() << "to" << scales.back();
  return out.str();
}

std::string CriticalValues::serialize() const {
  std::ostringstream out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "hilde_critical_values_v1\n";
  out << "family " << family << "\n";
  out << "n " << n << "\n";
  out << "kernel_fingerprint " << kernel_fingerprint << "\n";
  out << "alpha " << num(alpha) << "\n";
  out << "lambda " << num(lambda) << "\n";
  out << "achieved_level " << num(achieved_level) << "\n";
  out << "replications " << replications << "\n";
  out << "seed " << seed << "\n";
  out << "scales " << scales.size() << "\n";
  for (size_t l = 0; l < scales.size(); ++l)
    out << scales[l] << " " << num(q[l]) << " " << num(weights[l]) << "\n";
  return out.str();
}

CriticalValues CriticalValues::deserialize(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header != "hilde_critical_values_v1")
    throw InputError("critical values record: bad header");
  CriticalValues cv;
  std::string key;
  int n_scales = -1;
  while (in >> key) {
    if (key == "family")
      in >> cv.family;
    else if (key == "n")
      in >> cv.n;
    else if (key == "kernel_fingerprint")
      in >> cv.kernel_fingerprint;
    else if (key == "alpha")
      in >> cv.alpha;
    else if (key == "lambda")
      in >> cv.lambda;
    else if (key == "achieved_level")
      in >> cv.achieved_level;
    else if (key == "replications")
      in >> cv.replications;
    else if (key == "seed")
      in >> cv.seed;
    else if (key == "scales") {
      in >> n_scales;
      cv.scales.resize(n_scales);
      cv.q.resize(n_scales);
      cv.weights.resize(n_scales);
      for (int l = 0; l < n_scales; ++l) in >> cv.scales[l] >> cv.q[l] >> cv.weights[l];
    } else {
      throw InputError("critical values record: unknown key '" + key + "'");
    }
  }
  if (n_scales < 0) throw InputError("critical values record: missing scales");
  return cv;
}

}  // namespace hilde
