// Test-only oracles, independent of the library's analytic evaluation paths:
// adaptive quadrature, an ODE integration of the filter's state space, a
// discrete-convolution expectation and a reference (unpruned) dynamic
// program.
#ifndef HILDE_TESTS_ORACLES_HPP
#define HILDE_TESTS_ORACLES_HPP

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "hilde/bessel_filter.hpp"
#include "hilde/critical_values.hpp"
#include "hilde/types.hpp"

namespace oracles {

inline double adaptive_simpson_rec(const std::function<double(double)>& f, double a, double b,
                                   double fa, double fm, double fb, double whole, double tol,
                                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double quadrature(const std::function<double(double)>& f, double a, double b,
                         double tol = 1e-13) {
  if (!(b > a)) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 20);
}

/// Impulse response of the all-pole filter via RK4 on the controllable
/// canonical state space, a route fully independent of partial fractions.
class OdeImpulse {
 public:
  explicit OdeImpulse(const hilde::FilterKernel& k) {
    const auto& poles = k.poles();
    const int n = static_cast<int>(poles.size());
    // characteristic polynomial prod (s - p_i), ascending real coefficients
    std::vector<std::complex<double>> c{1.0};
    for (const auto& p : poles) {
      std::vector<std::complex<double>> next(c.size() + 1, 0.0);
      for (size_t i = 0; i < c.size(); ++i) {
        next[i + 1] += c[i];
        next[i] += -p * c[i];
      }
      c = next;
    }
    A_ = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i + 1 < n; ++i) A_(i, i + 1) = 1.0;
    for (int j = 0; j < n; ++j) A_(n - 1, j) = -c[j].real();
    b0_ = c[0].real();  // unit DC gain numerator
    x0_ = Eigen::VectorXd::Zero(n);
    x0_[n - 1] = 1.0;
  }

  /// h(t) integrated with fixed-step RK4 up to t.
  double at(double t, int steps = 200000) const {
    if (t < 0.0) return 0.0;
    Eigen::VectorXd x = x0_;
    const double h = t / steps;
    for (int s = 0; s < steps; ++s) {
      const Eigen::VectorXd k1 = A_ * x;
      const Eigen::VectorXd k2 = A_ * (x + 0.5 * h * k1);
      const Eigen::VectorXd k3 = A_ * (x + 0.5 * h * k2);
      const Eigen::VectorXd k4 = A_ * (x + h * k3);
      x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return b0_ * x[0];
  }

 private:
  Eigen::MatrixXd A_;
  Eigen::VectorXd x0_;
  double b0_ = 0.0;
};

/// E[Y_i] by brute-force discrete convolution of the truncated kernel with
/// the signal on a fine grid (midpoint rule).
inline double expectation_oracle(const hilde::PiecewiseSignal& sig, const hilde::FilterKernel& k,
                                 int i, int oversampling = 1000) {
  const double fs = k.sample_rate();
  const double dt = 1.0 / (oversampling * fs);
  const double t = i / fs;
  double acc = 0.0, norm = 0.0;
  const int taps = k.m() * oversampling;
  for (int c = 0; c < taps; ++c) {
    const double w = k.kernel((c + 0.5) * dt);
    acc += w * sig.level_at(t - (c + 0.5) * dt);
    norm += w;
  }
  return acc / norm;
}

/// Reference fit: unpruned Bellman over all segment starts with directly
/// accumulated interval bounds.  Only for small n.
struct ReferenceFit {
  int k_hat;
  std::vector<int> boundaries;  // last sample of each segment but the final
  std::vector<double> levels;
  double cost;
};

inline ReferenceFit reference_fit(const hilde::Trace& tr, const hilde::FilterKernel& k,
                                  const hilde::CriticalValues& cv) {
  const int n = tr.n();
  const int m = k.m();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(n + 1), s2 = Eigen::VectorXd::Zero(n + 1);
  for (int i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + tr.samples[i];
    s2[i + 1] = s2[i] + tr.samples[i] * tr.samples[i];
  }

  // bounds[a][r] for the segment [a, r], accumulated over dyadic intervals
  std::vector<std::vector<std::pair<double, double>>> lohi(
      n + 1, std::vector<std::pair<double, double>>(n + 1, {-inf, inf}));
  for (int a = 1; a <= n; ++a) {
    std::pair<double, double> cur{-inf, inf};
    for (int r = a; r <= n; ++r) {
      for (size_t l = 0; l < cv.scales.size(); ++l) {
        const int L = cv.scales[l];
        const int i = r - L + 1;
        if (i < a) continue;
        if (i > r) continue;
        const int cnt = L - m;
        const double sum = s1[r] - s1[i + m - 1];
        const double sum2 = s2[r] - s2[i + m - 1];
        const double mean = sum / cnt;
        const double var = (sum2 - sum * mean) / (cnt - 1);
        const double delta = var > 0.0 ? std::sqrt(2.0 * cv.q[l] * var / cnt) : 0.0;
        cur.first = std::max(cur.first, mean - delta);
        cur.second = std::min(cur.second, mean + delta);
      }
      lohi[a][r] = cur;
    }
  }
  auto seg_cost = [&](int a, int r, double& level) {
    const auto [blo, bhi] = lohi[a][r];
    const int cnt = r - a + 1 - m;
    if (cnt < 2) {
      const double mean = (s1[r] - s1[a - 1]) / (r - a + 1);
      level = std::min(std::max(mean, blo), bhi);
      return 0.0;
    }
    const double sum = s1[r] - s1[a + m - 1];
    const double sum2 = s2[r] - s2[a + m - 1];
    const double mean = sum / cnt;
    level = std::min(std::max(mean, blo), bhi);
    const double rss = sum2 - 2.0 * level * sum + level * level * cnt;
    return rss > 0.0 ? cnt * std::log(rss / cnt) : -inf;
  };

  std::vector<int> J(n + 1, 0);
  std::vector<double> C(n + 1, 0.0);
  std::vector<int> prev(n + 1, 0);
  std::vector<double> lev(n + 1, 0.0);
  for (int r = 1; r <= n; ++r) {
    int bestJ = n + 2;
    double bestC = inf;
    int bestA = 1;
    double bestLevel = 0.0;
    for (int a = 1; a <= r; ++a) {
      const auto [blo, bhi] = lohi[a][r];
      if (blo > bhi) continue;
      double level;
      const double c = seg_cost(a, r, level);
      const int j = J[a - 1] + 1;
      const double total = C[a - 1] + c;
      if (j < bestJ || (j == bestJ && total < bestC)) {
        bestJ = j;
        bestC = total;
        bestA = a;
        bestLevel = level;
      }
    }
    J[r] = bestJ;
    C[r] = bestC;
    prev[r] = bestA - 1;
    lev[r] = bestLevel;
  }

  ReferenceFit out;
  out.k_hat = J[n] - 1;
  out.cost = C[n];
  for (int r = n; r > 0;) {
    out.levels.push_back(lev[r]);
    r = prev[r];
    if (r > 0) out.boundaries.push_back(r);
  }
  std::reverse(out.boundaries.begin(), out.boundaries.end());
  std::reverse(out.levels.begin(), out.levels.end());
  return out;
}

}  // namespace oracles

#endif
