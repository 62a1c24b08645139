#include "hilde/detect_long.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hilde/model.hpp"
#include "hilde/parallel.hpp"

namespace hilde {

double jsmurf_stat(const Trace& tr, int i, int j, double level, int m) {
  const int cnt = j - i + 1 - m;
  if (cnt < 2) throw InputError("jsmurf_stat: interval too short (needs j-i+1 > m+1)");
  if (i < 1 || j > tr.n()) throw InputError("jsmurf_stat: interval out of range");
  double sum = 0.0, sum2 = 0.0;
  for (int l = i + m; l <= j; ++l) {
    const double y = tr.samples[l - 1];
    sum += y;
    sum2 += y * y;
  }
  const double mean = sum / cnt;
  const double var = (sum2 - sum * mean) / (cnt - 1);
  const double num = mean - level;
  if (var <= 0.0)
    return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return cnt * num * num / (2.0 * var);
}

std::vector<int> dyadic_scales(int n, int m) {
  std::vector<int> scales;
  for (long L = 1; L <= n; L *= 2)
    if (L > m + 1) scales.push_back(static_cast<int>(L));
  return scales;
}

CriticalValues calibrate_jsmurf(int n, const FilterKernel& k, double alpha,
                                const std::vector<int>& scales, int replications,
                                uint64_t seed, int threads) {
  if (n < 2) throw InputError("calibrate_jsmurf: n too small");
  const int m = k.m();
  for (int L : scales)
    if (L <= m + 1 || L > n) throw InputError("calibrate_jsmurf: scale outside (m+1, n]");
  const int S = static_cast<int>(scales.size());

  FilteredNoiseSampler sampler(k);
  Eigen::MatrixXd maxima(replications, S);
  parallel_for(
      replications,
      [&](long rep) {
        Eigen::VectorXd y;
        sampler.sample(n, seed, static_cast<uint64_t>(rep), y);
        Eigen::VectorXd s1(n + 1), s2(n + 1);
        s1[0] = s2[0] = 0.0;
        for (int i = 0; i < n; ++i) {
          s1[i + 1] = s1[i] + y[i];
          s2[i + 1] = s2[i] + y[i] * y[i];
        }
        for (int l = 0; l < S; ++l) {
          const int L = scales[l];
          const int cnt = L - m;
          double best = -std::numeric_limits<double>::infinity();
          for (int i = 1; i + L - 1 <= n; ++i) {
            const int a = i + m, b = i + L - 1;
            const double sum = s1[b] - s1[a - 1];
            const double sum2 = s2[b] - s2[a - 1];
            const double mean = sum / cnt;
            const double var = (sum2 - sum * mean) / (cnt - 1);
            if (var <= 0.0) continue;
            const double t = cnt * mean * mean / (2.0 * var);
            if (t > best) best = t;
          }
          maxima(rep, l) = best;
        }
      },
      threads);

  Eigen::VectorXd weights = Eigen::VectorXd::Constant(S, 1.0 / S);
  CriticalValues cv = balance_critical_values(maxima, scales, weights, alpha);
  cv.family = "jsmurf";
  cv.n = n;
  cv.seed = seed;
  cv.kernel_fingerprint = k.fingerprint_hex();
  return cv;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Range tree over positions 1..n holding per-position level intervals
// [lo, hi]; supports point intersection and range queries of
// (max lo, min hi).  A segment [a, r] is feasible iff the query over [a, r]
// yields a nonempty interval.
class BoundTree {
 public:
  void init(int n) {
    size_ = 1;
    while (size_ < n) size_ *= 2;
    lo_.assign(2 * size_, -kInf);
    hi_.assign(2 * size_, kInf);
  }
  void intersect_at(int pos, double lo, double hi) {  // pos is 1-based
    int x = size_ + pos - 1;
    lo_[x] = std::max(lo_[x], lo);
    hi_[x] = std::min(hi_[x], hi);
    for (x /= 2; x >= 1; x /= 2) {
      lo_[x] = std::max(lo_[2 * x], lo_[2 * x + 1]);
      hi_[x] = std::min(hi_[2 * x], hi_[2 * x + 1]);
    }
  }
  // (max lo, min hi) over positions [a, b]
  std::pair<double, double> query(int a, int b) const {
    double lo = -kInf, hi = kInf;
    int x = size_ + a - 1, y = size_ + b - 1;
    while (x <= y) {
      if (x & 1) {
        lo = std::max(lo, lo_[x]);
        hi = std::min(hi, hi_[x]);
        ++x;
      }
      if (!(y & 1)) {
        lo = std::max(lo, lo_[y]);
        hi = std::min(hi, hi_[y]);
        --y;
      }
      x /= 2;
      y /= 2;
    }
    return {lo, hi};
  }

 private:
  int size_ = 0;
  std::vector<double> lo_, hi_;
};

struct SegmentCost {
  double cost;
  double level;
};

}  // namespace

Idealization fit(const Trace& tr, const FilterKernel& k, const CriticalValues& cv) {
  const int n = tr.n();
  const int m = k.m();
  if (n < 1) throw InputError("fit: empty trace");
  if (cv.family != "jsmurf")
    throw InputError("fit: critical values calibrated for family '" + cv.family + "'");
  if (cv.n != n)
    throw InputError("fit: critical values calibrated for n=" + std::to_string(cv.n) +
                     ", trace has n=" + std::to_string(n));
  if (cv.kernel_fingerprint != k.fingerprint_hex())
    throw InputError("fit: critical values calibrated for a different filter");
  const std::vector<int> scales = cv.scales;
  std::vector<double> qs(scales.size());
  for (size_t l = 0; l < scales.size(); ++l) qs[l] = cv.q[l];

  Eigen::VectorXd s1(n + 1), s2(n + 1);
  s1[0] = s2[0] = 0.0;
  for (int i = 0; i < n; ++i) {
    s1[i + 1] = s1[i] + tr.samples[i];
    s2[i + 1] = s2[i] + tr.samples[i] * tr.samples[i];
  }

  // Level bound from the test on [i, j]: |mean - level| <= delta.
  auto interval_bound = [&](int i, int j, double q) {
    const int cnt = j - i + 1 - m;
    const double sum = s1[j] - s1[i + m - 1];
    const double sum2 = s2[j] - s2[i + m - 1];
    const double mean = sum / cnt;
    const double var = (sum2 - sum * mean) / (cnt - 1);
    const double delta = var > 0.0 ? std::sqrt(2.0 * q * var / cnt) : 0.0;
    return std::pair<double, double>(mean - delta, mean + delta);
  };

  // Constrained segment cost on [a, r]: profiled Gaussian likelihood with the
  // level clamped into the feasible interval, first m observations skipped.
  auto segment_cost = [&](int a, int r, double blo, double bhi) {
    SegmentCost sc;
    const int cnt = r - a + 1 - m;
    if (cnt < 2) {
      const int raw = r - a + 1;
      double mean = (s1[r] - s1[a - 1]) / raw;
      sc.level = std::clamp(mean, blo, bhi);
      sc.cost = 0.0;
      return sc;
    }
    const double sum = s1[r] - s1[a + m - 1];
    const double sum2 = s2[r] - s2[a + m - 1];
    const double mean = sum / cnt;
    const double c = std::clamp(mean, blo, bhi);
    const double rss = sum2 - 2.0 * c * sum + c * c * cnt;
    sc.level = c;
    sc.cost = rss > 0.0 ? cnt * std::log(rss / cnt) : -kInf;
    return sc;
  };

  BoundTree tree;
  tree.init(n);

  std::vector<int> J(n + 1, 0);
  std::vector<double> C(n + 1, 0.0);
  std::vector<int> prev(n + 1, 0);
  std::vector<double> lev(n + 1, 0.0);
  std::vector<int> first_of_J{0};  // first_of_J[j] = smallest x with J[x] = j
  int amin = 1;

  for (int r = 1; r <= n; ++r) {
    for (size_t l = 0; l < scales.size(); ++l) {
      const int L = scales[l];
      const int i = r - L + 1;
      if (i < 1) break;  // scales ascending
      auto [blo, bhi] = interval_bound(i, r, qs[l]);
      tree.intersect_at(i, blo, bhi);
    }

    // Smallest feasible start of a segment ending at r; monotone in r.
    {
      int lo = amin, hi = r;
      while (lo < hi) {
        const int mid = (lo + hi) / 2;
        auto [blo, bhi] = tree.query(mid, r);
        if (blo <= bhi)
          hi = mid;
        else
          lo = mid + 1;
      }
      amin = lo;
    }

    const int Jr = J[amin - 1] + 1;
    // Candidate last-change positions x = a-1 with J[x] = Jr - 1.
    const int run_first = first_of_J[Jr - 1];
    const int run_last =
        (static_cast<int>(first_of_J.size()) > Jr) ? first_of_J[Jr] - 1 : r - 1;
    double best_cost = kInf;
    int best_a = amin;
    double best_level = 0.0;
    for (int x = std::max(amin - 1, run_first); x <= run_last; ++x) {
      const int a = x + 1;
      auto [blo, bhi] = tree.query(a, r);
      if (blo > bhi) continue;
      const SegmentCost sc = segment_cost(a, r, blo, bhi);
      const double total = C[x] + sc.cost;
      if (total < best_cost) {
        best_cost = total;
        best_a = a;
        best_level = sc.level;
      }
    }
    J[r] = Jr;
    C[r] = best_cost;
    prev[r] = best_a - 1;
    lev[r] = best_level;
    if (static_cast<int>(first_of_J.size()) == Jr) first_of_J.push_back(r);
  }

  // Backtrack.
  std::vector<int> boundaries;  // last sample index of each segment but the final
  std::vector<double> levels;
  for (int r = n; r > 0;) {
    levels.push_back(lev[r]);
    r = prev[r];
    if (r > 0) boundaries.push_back(r);
  }
  std::reverse(boundaries.begin(), boundaries.end());
  std::reverse(levels.begin(), levels.end());

  // Merge exact level ties so the fitted signal stays identifiable.
  for (size_t c = 0; c + 1 < levels.size();) {
    if (levels[c] == levels[c + 1]) {
      levels.erase(levels.begin() + c + 1);
      boundaries.erase(boundaries.begin() + c);
    } else {
      ++c;
    }
  }

  Idealization ideal;
  const double fs = tr.sample_rate;
  const int K = static_cast<int>(boundaries.size());
  ideal.signal.change_times.resize(K);
  for (int c = 0; c < K; ++c) ideal.signal.change_times[c] = boundaries[c] / fs;
  ideal.signal.levels = Eigen::Map<Eigen::VectorXd>(levels.data(), levels.size());
  ideal.signal.end_time = n / fs;
  ideal.signal.sds.resize(K + 1);

  // Residual sd per segment (raw diagnostic, first m observations skipped).
  ideal.segment_residual_sd.resize(K + 1);
  for (int seg = 0; seg <= K; ++seg) {
    const int a = (seg == 0) ? 1 : boundaries[seg - 1] + 1;
    const int b = (seg == K) ? n : boundaries[seg];
    const int lo = std::min(a + m, b);
    const int cnt = b - lo + 1;
    double rss = 0.0;
    for (int i = lo; i <= b; ++i) {
      const double d = tr.samples[i - 1] - levels[seg];
      rss += d * d;
    }
    const double sd = cnt > 1 ? std::sqrt(rss / cnt) : 0.0;
    ideal.segment_residual_sd[seg] = sd;
    ideal.signal.sds[seg] = sd;
  }
  ideal.sync_flags();
  return ideal;
}

}  // namespace hilde
