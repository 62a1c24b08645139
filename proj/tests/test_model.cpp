#include <doctest.h>

#include <cmath>

#include <Eigen/Eigenvalues>

#include "hilde/model.hpp"
#include "hilde/rng.hpp"
#include "oracles.hpp"

using namespace hilde;

namespace {

const FilterKernel& kern() {
  static FilterKernel k = FilterKernel::make_bessel(4, 1000.0, 10000.0, 1e-3);
  return k;
}

PiecewiseSignal constant_signal(double level, double sd, double end_time = 1.0) {
  PiecewiseSignal sig;
  sig.levels = Eigen::VectorXd::Constant(1, level);
  sig.sds = Eigen::VectorXd::Constant(1, sd);
  sig.end_time = end_time;
  return sig;
}

PiecewiseSignal step_signal(double tau, double c0, double c1, double s0, double s1,
                            double end_time) {
  PiecewiseSignal sig;
  sig.change_times = Eigen::VectorXd::Constant(1, tau);
  sig.levels.resize(2);
  sig.levels << c0, c1;
  sig.sds.resize(2);
  sig.sds << s0, s1;
  sig.end_time = end_time;
  return sig;
}

}  // namespace

TEST_CASE("expectation of a constant signal is the level everywhere") {
  const auto sig = constant_signal(0.42, 0.1);
  for (int i : {1, 2, 17, 500})
    CHECK(expectation(sig, kern(), i) == doctest::Approx(0.42).epsilon(1e-13));
}

TEST_CASE("expectation reaches the new level once the kernel has passed") {
  const auto sig = step_signal(50.0 / 10000.0, 0.0, 0.32, 0.01, 0.03, 1.0);
  CHECK(expectation(sig, kern(), 50 + kern().m()) == doctest::Approx(0.32).epsilon(1e-12));
  CHECK(expectation(sig, kern(), 50) == doctest::Approx(0.0).epsilon(1e-12));
  const double mid = expectation(sig, kern(), 53);
  CHECK(mid > 0.05);
  CHECK(mid < 0.32);
}

TEST_CASE("expectation matches the oversampled discrete convolution") {
  PiecewiseSignal sig;
  sig.change_times.resize(2);
  sig.change_times << 30.5 / 10000.0, 33.2 / 10000.0;  // off-grid changes
  sig.levels.resize(3);
  sig.levels << 0.1, 0.5, -0.2;
  sig.sds = Eigen::VectorXd::Constant(3, 0.0);
  sig.end_time = 0.01;
  for (int i : {25, 31, 33, 36, 45, 60})
    CHECK(expectation(sig, kern(), i) ==
          doctest::Approx(oracles::expectation_oracle(sig, kern(), i, 1000)).epsilon(1e-6));
}

TEST_CASE("homogeneous covariance is stationary and proportional to the correlation") {
  const double s0 = 0.07;
  const auto sig = constant_signal(1.0, s0);
  for (int i : {1, 5, 100})
    for (int j = -kern().m() - 2; j <= kern().m() + 2; ++j) {
      const double expected =
          std::abs(j) > kern().m() ? 0.0 : s0 * s0 * kern().corr_inf(std::abs(j));
      CHECK(covariance(sig, kern(), i, j) ==
            doctest::Approx(expected).epsilon(1e-10).scale(s0 * s0));
    }
}

TEST_CASE("covariance vanishes beyond the truncation lag") {
  const auto sig = step_signal(0.005, 0.0, 1.0, 1.0, 2.0, 1.0);
  CHECK(covariance(sig, kern(), 52, kern().m() + 1) == 0.0);
  CHECK(covariance(sig, kern(), 52, -kern().m() - 1) == 0.0);
}

TEST_CASE("covariance windows are symmetric positive semidefinite") {
  const auto sig = step_signal(0.0025, 0.0, 0.32, 0.0078, 0.0316, 1.0);
  hilde::Xoshiro256 rng(5);
  for (int rep = 0; rep < 4; ++rep) {
    const int start = 1 + static_cast<int>(rng.uniform() * 100);
    const int w = 50;
    Eigen::MatrixXd cov(w, w);
    for (int a = 0; a < w; ++a)
      for (int b = 0; b < w; ++b) cov(a, b) = covariance(sig, kern(), start + a, b - a);
    CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
  }
}

TEST_CASE("noiseless simulation returns the exact expectation") {
  const auto sig = step_signal(0.002, 0.0, 0.32, 0.0, 0.0, 1.0);
  const Trace tr = simulate(sig, kern(), 100, 100, 42);
  for (int i = 1; i <= 100; ++i)
    CHECK(tr.samples[i - 1] == doctest::Approx(expectation(sig, kern(), i)).epsilon(1e-12));
}

TEST_CASE("simulation is bit-reproducible for equal seeds") {
  const auto sig = step_signal(0.002, 0.0, 0.32, 0.0078, 0.0316, 1.0);
  const Trace a = simulate(sig, kern(), 400, 100, 99);
  const Trace b = simulate(sig, kern(), 400, 100, 99);
  CHECK((a.samples - b.samples).cwiseAbs().maxCoeff() == 0.0);
  const Trace c = simulate(sig, kern(), 400, 100, 100);
  CHECK((a.samples - c.samples).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("simulated sample variance matches the model variance") {
  const auto sig = constant_signal(0.0, 1.0, 120.0);
  const int n = 1000000;
  const Trace tr = simulate(sig, kern(), n, 20, 7);
  const double var = tr.samples.squaredNorm() / n - std::pow(tr.samples.mean(), 2);
  CHECK(var == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("simulated moments around a heterogeneous change match the exact covariance") {
  const auto sig = step_signal(20.0 / 10000.0, 0.0, 1.0, 1.0, 2.0, 1.0);
  const int n = 26, reps = 50000;
  const std::vector<std::pair<int, int>> pairs{{19, 21}, {25, 25}, {22, 24}, {15, 15}};
  Eigen::MatrixXd vals(reps, 8);
  for (int r = 0; r < reps; ++r) {
    const Trace tr = simulate(sig, kern(), n, 100, 1000 + r);
    for (int p = 0; p < 4; ++p) {
      vals(r, 2 * p) = tr.samples[pairs[p].first - 1];
      vals(r, 2 * p + 1) = tr.samples[pairs[p].second - 1];
    }
  }
  for (int p = 0; p < 4; ++p) {
    const auto a = vals.col(2 * p), b = vals.col(2 * p + 1);
    const double ma = a.mean(), mb = b.mean();
    const double cov_emp = ((a.array() - ma) * (b.array() - mb)).mean();
    const double cov_exact =
        covariance(sig, kern(), pairs[p].first, pairs[p].second - pairs[p].first);
    const double va = ((a.array() - ma).square()).mean();
    const double vb = ((b.array() - mb).square()).mean();
    const double se = std::sqrt((va * vb + cov_emp * cov_emp) / reps);
    CHECK(std::abs(cov_emp - cov_exact) < 3.0 * se);
  }
}

TEST_CASE("hmm with a single state yields a constant signal") {
  HmmSpec spec;
  spec.state_means = Eigen::VectorXd::Constant(1, 0.3);
  spec.state_sds = Eigen::VectorXd::Constant(1, 0.01);
  spec.dwell_rates = Eigen::VectorXd::Constant(1, 10.0);
  spec.transition_probs = Eigen::MatrixXd::Zero(1, 1);
  const auto sig = simulate_hmm(spec, 5.0, 3);
  CHECK(sig.num_changes() == 0);
  CHECK(sig.levels[0] == 0.3);
}

namespace {
HmmSpec porb_spec() {
  HmmSpec spec;
  spec.state_means.resize(3);
  spec.state_means << 0.0, 0.0, 0.32;
  spec.state_sds.resize(3);
  spec.state_sds << 0.0078, 0.0078, 0.0316;
  spec.dwell_rates.resize(3);
  spec.dwell_rates << 20.0, 400.0, 7.0;
  spec.transition_probs = Eigen::MatrixXd::Zero(3, 3);
  spec.transition_probs(0, 2) = 1.0;
  spec.transition_probs(1, 2) = 1.0;
  spec.transition_probs(2, 0) = 2.0 / 3.0;
  spec.transition_probs(2, 1) = 1.0 / 3.0;
  return spec;
}
}  // namespace

TEST_CASE("hmm open-state dwells and branching match the generator parameters") {
  const auto spec = porb_spec();
  double dwell_sum = 0.0;
  long dwell_count = 0;
  hilde::Xoshiro256 seeder(17);
  for (int run = 0; run < 200; ++run) {
    const auto sig = simulate_hmm(spec, 20.0, seeder.next());
    for (int s = 1; s + 1 < sig.num_segments(); ++s) {
      if (sig.levels[s] != 0.32) continue;  // interior open sojourns only
      dwell_sum += sig.change_times[s] - sig.change_times[s - 1];
      ++dwell_count;
    }
  }
  CHECK(dwell_count > 10000);
  CHECK(dwell_sum / dwell_count == doctest::Approx(1.0 / 7.0).epsilon(0.02));

  // branching fraction: distinct means so the merge cannot hide the branch
  HmmSpec distinct = spec;
  distinct.state_means << 0.0, 0.1, 0.32;
  long to_first = 0, exits = 0;
  for (int run = 0; run < 100; ++run) {
    const auto sig = simulate_hmm(distinct, 20.0, 1000 + run);
    for (int s = 1; s + 1 < sig.num_segments(); ++s) {
      if (sig.levels[s] != 0.32) continue;
      ++exits;
      if (sig.levels[s + 1] == 0.0) ++to_first;
    }
  }
  const double frac = static_cast<double>(to_first) / exits;
  const double se = std::sqrt(frac * (1.0 - frac) / exits);
  CHECK(std::abs(frac - 2.0 / 3.0) < 3.0 * se);
}

TEST_CASE("identity moving average reproduces the white-noise trace bit for bit") {
  const auto sig = step_signal(0.002, 0.0, 0.32, 0.0078, 0.0316, 1.0);
  const Trace white = simulate(sig, kern(), 300, 100, 5);
  ContaminationParams params;
  params.signal = sig;
  params.ma0 = 1.0;
  params.ma1 = 0.0;
  const Trace violet = add_contamination(white, kern(), ContaminationKind::Violet, params, 5);
  CHECK((white.samples - violet.samples).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("the violet moving average has the predicted lag-one autocorrelation") {
  // w_g = 0.8 z_g - 0.6 z_{g-1}: corr(w_g, w_{g-1}) = 0.8*(-0.6)/(0.64+0.36)
  GaussianSampler g(77, 0);
  const int n = 400000;
  double prev_z = g.next(), prev_w = 0.0;
  double sum2 = 0.0, cross = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = g.next();
    const double w = 0.8 * z - 0.6 * prev_z;
    prev_z = z;
    sum2 += w * w;
    if (i > 0) cross += w * prev_w;
    prev_w = w;
  }
  const double var = sum2 / n;
  const double rho1 = (cross / (n - 1)) / var;
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
  CHECK(rho1 == doctest::Approx(-0.48).epsilon(0.03));
}

TEST_CASE("pink contamination halves the background noise and adds the 1/f component") {
  const auto sig = constant_signal(0.0, std::sqrt(6.1e-5), 10.0);
  Trace base;
  base.samples.resize(100000);
  base.sample_rate = 10000.0;
  ContaminationParams params;
  params.signal = sig;
  params.pink_sd = 0.5 * std::sqrt(6.1e-5);
  const Trace tr = add_contamination(base, kern(), ContaminationKind::Pink, params, 21);
  const double mean = tr.samples.mean();
  const double sd = std::sqrt((tr.samples.array() - mean).square().mean());
  CHECK(sd == doctest::Approx(std::sqrt(6.1e-5 / 4.0 + 6.1e-5 / 4.0)).epsilon(0.05));
}

TEST_CASE("pink noise generator hits the target sd exactly") {
  const auto x = pink_noise(5000, 10000.0, 0.02, 0.0, 0.0, 9);
  CHECK(std::abs(x.mean()) < 1e-12);
  CHECK(std::sqrt(x.squaredNorm() / x.size()) == doctest::Approx(0.02).epsilon(1e-10));
}

TEST_CASE("stationary noise sampler reproduces the filtered autocorrelation") {
  FilteredNoiseSampler sampler(kern());
  Eigen::VectorXd y;
  sampler.sample(400000, 13, 0, y);
  const int n = static_cast<int>(y.size());
  for (int lag : {0, 1, 3, 7}) {
    double acc = 0.0;
    for (int i = 0; i + lag < n; ++i) acc += y[i] * y[i + lag];
    acc /= (n - lag);
    CHECK(std::abs(acc - kern().corr_inf(lag)) < 0.01);
  }
}
