#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hilde/bessel_filter.hpp"
#include "hilde/rng.hpp"
#include "hilde/types.hpp"
#include "oracles.hpp"

using hilde::FilterKernel;

namespace {
const FilterKernel& default_kernel() {
  static FilterKernel k = FilterKernel::make_bessel(4, 1000.0, 10000.0, 1e-3);
  return k;
}
}  // namespace

TEST_CASE("truncation rule reproduces m = 11 for the default filter") {
  CHECK(default_kernel().m() == 11);
}

TEST_CASE("invalid construction is rejected") {
  CHECK_THROWS_AS(FilterKernel::make_bessel(0, 1000, 10000, 1e-3), hilde::InputError);
  CHECK_THROWS_AS(FilterKernel::make_bessel(4, 5000, 10000, 1e-3), hilde::InputError);
  CHECK_THROWS_AS(FilterKernel::make_bessel(4, 6000, 10000, 1e-3), hilde::InputError);
  CHECK_THROWS_AS(FilterKernel::make_bessel(4, 1000, 10000, 2.0), hilde::InputError);
}

TEST_CASE("one-pole filter has the exponential impulse response") {
  const auto k = FilterKernel::make_bessel(1, 800.0, 10000.0, 1e-3);
  const double a = 2.0 * M_PI * 800.0;  // -3 dB of a one-pole at the pole frequency
  for (double t : {1e-5, 1e-4, 3e-4, 8e-4}) {
    if (t > k.truncation_time()) continue;
    CHECK(k.kernel(t) == doctest::Approx(k.rescale() * a * std::exp(-a * t)).epsilon(1e-10));
  }
}

TEST_CASE("kernel vanishes outside the truncated support") {
  const auto& k = default_kernel();
  CHECK(k.kernel(-0.1) == 0.0);
  CHECK(k.kernel(k.truncation_time() + 1e-9) == 0.0);
  CHECK(k.step_response(-1e-12) == 0.0);
  CHECK(k.step_response(0.0) == 0.0);
  CHECK(k.step_response(k.truncation_time()) == 1.0);
  CHECK(k.step_response(1.0) == 1.0);
}

TEST_CASE("truncated kernel integrates to one") {
  const auto& k = default_kernel();
  const double integral =
      oracles::quadrature([&](double t) { return k.kernel(t); }, 0.0, k.truncation_time(), 1e-15);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kernel agrees with the state-space ODE integration") {
  const auto& k = default_kernel();
  const oracles::OdeImpulse ode(k);
  hilde::Xoshiro256 rng(7);
  for (int i = 0; i < 20; ++i) {
    const double t = rng.uniform() * k.truncation_time();
    const double expected = k.rescale() * ode.at(t);
    CHECK(std::abs(k.kernel(t) - expected) < 1e-8 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("step response is the kernel antiderivative") {
  const auto& k = default_kernel();
  hilde::Xoshiro256 rng(11);
  for (int i = 0; i < 10; ++i) {
    const double t = rng.uniform() * k.truncation_time();
    const double quad =
        oracles::quadrature([&](double s) { return k.kernel(s); }, 0.0, t, 1e-13);
    CHECK(std::abs(k.step_response(t) - quad) < 1e-9);
  }
}

TEST_CASE("step response rises from 0 to 1 with only the undershoot dip") {
  // The 4-pole Bessel kernel undershoots negative near the truncation point,
  // so the step overshoots and declines by about 9.5e-3 (grid-scan value);
  // it must never decline by more.
  const auto& k = default_kernel();
  double running_max = 0.0, worst_decline = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double t = i * k.truncation_time() / 20000;
    const double s = k.step_response(t);
    running_max = std::max(running_max, s);
    worst_decline = std::max(worst_decline, running_max - s);
  }
  CHECK(worst_decline < 0.011);
  CHECK(running_max < 1.011);
}

TEST_CASE("autocorrelation vanishes for empty ranges and disjoint supports") {
  const auto& k = default_kernel();
  const double T = k.truncation_time();
  for (double lag : {0.0, 1e-4, -3e-4, T, -T, 2.0 * T}) {
    CHECK(k.autocorr(0.0, lag) == 0.0);
    CHECK(k.autocorr(-1e-6, lag) == 0.0);
  }
  CHECK(k.autocorr(T, T) == 0.0);
  CHECK(k.autocorr(T, -T) == 0.0);
}

TEST_CASE("autocorr at full range and zero lag equals the squared-kernel integral") {
  const auto& k = default_kernel();
  const double quad = oracles::quadrature([&](double s) { return k.kernel(s) * k.kernel(s); },
                                          0.0, k.truncation_time(), 1e-9);
  CHECK(std::abs(k.autocorr(k.truncation_time(), 0.0) - quad) < 1e-10 * quad);
  CHECK(k.acf0() == k.autocorr(k.truncation_time(), 0.0));
}

TEST_CASE("autocorr increments match quadrature of the lagged product") {
  const auto& k = default_kernel();
  const double T = k.truncation_time();
  hilde::Xoshiro256 rng(23);
  for (int i = 0; i < 12; ++i) {
    double t1 = rng.uniform() * T, t2 = rng.uniform() * T;
    if (t1 > t2) std::swap(t1, t2);
    const double lag = (2.0 * rng.uniform() - 1.0) * T;
    const double inc = k.autocorr(t2, lag) - k.autocorr(t1, lag);
    const double quad = oracles::quadrature(
        [&](double s) { return k.kernel(s) * k.kernel(s + lag); }, t1, t2, 1e-13);
    // the integrand peaks near 7e6, so the quadrature itself carries
    // rounding noise of order 1e-7 absolute
    CHECK(std::abs(inc - quad) < 1e-6);
  }
}

TEST_CASE("autocorr at zero lag is nondecreasing in t") {
  const auto& k = default_kernel();
  double prev = 0.0;
  for (int i = 1; i <= 500; ++i) {
    const double cur = k.autocorr(i * k.truncation_time() / 500, 0.0);
    CHECK(cur >= prev - 1e-12);
    prev = cur;
  }
}

TEST_CASE("full-range autocorrelation is symmetric in the lag") {
  const auto& k = default_kernel();
  const double T = k.truncation_time();
  hilde::Xoshiro256 rng(31);
  for (int i = 0; i < 10; ++i) {
    const double lag = rng.uniform() * T;
    CHECK(k.autocorr(T, lag) == doctest::Approx(k.autocorr(T, -lag)).epsilon(1e-12));
  }
}

TEST_CASE("construction is deterministic and the record round-trips") {
  const auto a = FilterKernel::make_bessel(4, 1000.0, 10000.0, 1e-3);
  const auto b = FilterKernel::make_bessel(4, 1000.0, 10000.0, 1e-3);
  CHECK(a.serialize() == b.serialize());
  CHECK(a.fingerprint_hex() == b.fingerprint_hex());

  std::istringstream in(a.serialize());
  const auto c = FilterKernel::deserialize(in);
  CHECK(c.m() == a.m());
  CHECK(c.serialize() == a.serialize());
  for (double t : {1e-4, 5e-4, 9e-4})
    CHECK(c.kernel(t) == a.kernel(t));
}

TEST_CASE("grid caches agree with the analytic evaluations") {
  const auto& k = default_kernel();
  const double fs = k.sample_rate();
  for (int kk = 0; kk <= k.m(); ++kk) {
    CHECK(k.step_grid(kk) == doctest::Approx(k.step_response(kk / fs)).epsilon(1e-15));
    for (int r = -k.m(); r <= k.m(); ++r)
      CHECK(k.corr_grid(kk, r) == doctest::Approx(k.corr(kk / fs, r / fs)).epsilon(1e-14));
  }
  CHECK(k.corr_grid(-1, 0) == 0.0);
  CHECK(k.corr_grid(5, k.m() + 1) == 0.0);
  CHECK(k.corr_inf(0) == doctest::Approx(1.0));
}
