#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "phasest/metrics.hpp"
#include "phasest/observers.hpp"

using namespace phasest;
using namespace phasest::observers;
using stefan::StefanParams;
using stefan::StefanState;

namespace {

double series_i(int nu, double z) {
  double sum = 0.0;
  for (int m = 0; m < 40; ++m) {
    sum += std::pow(z / 2.0, 2 * m + nu) / (std::tgamma(m + 1.0) * std::tgamma(m + nu + 1.0));
  }
  return sum;
}

std::vector<double> random_profile(std::mt19937_64& rng, std::size_t n, double t_melt) {
  std::uniform_real_distribution<double> u(0.0, 20.0);
  std::vector<double> v(n);
  for (auto& x : v) x = t_melt + u(rng);
  v.back() = t_melt;
  return v;
}

}  // namespace

TEST_CASE("gain_p1 special values") {
  const double lambda = 0.3, alpha = 0.7, s = 1.3;
  CHECK(gain_p1(s, s, lambda, alpha) == 0.0);
  CHECK(gain_p1(0.0, s, lambda, alpha) == doctest::Approx(lambda * lambda * s * s / (8.0 * alpha)).epsilon(1e-14));
  const double z = std::sqrt(0.5 * 1.5);
  CHECK(gain_p1(0.5, 1.0, 1.0, 1.0) == doctest::Approx(1.0 * 0.5 * series_i(2, z) / (z * z)).epsilon(1e-13));
  CHECK(gain_p1(0.5, 1.0, 0.0, 1.0) == 0.0);
  CHECK_THROWS_AS(gain_p1(1.1, 1.0, 1.0, 1.0), InvalidArgument);
  CHECK_THROWS_AS(gain_p1(-0.1, 1.0, 1.0, 1.0), InvalidArgument);
}

TEST_CASE("gain_p2") {
  CHECK(gain_p2(0.0, 1.0, 1.0) == 0.0);
  CHECK(gain_p2(1.0, 2.0, 1.0) == -1.0);
  CHECK(gain_p2(2.0, 0.3, 0.7) == doctest::Approx(2.0 * gain_p2(1.0, 0.3, 0.7)));
}

TEST_CASE("kernel boundary traces") {
  const double lambda = 2.0, alpha = 0.1, D = 1.0;
  const auto k = kernel_solution(lambda, alpha, D);
  for (double y : {0.0, 0.3, 0.9, 1.0}) {
    CHECK(k.P(D, y) == 0.0);
    CHECK(k.Q(D, y) == 0.0);
  }
  for (double x : {0.0, 0.25, 0.6, 1.0}) {
    CHECK(k.P(x, x) == doctest::Approx(-(lambda / (2.0 * alpha)) * (x - D)).epsilon(1e-14));
    CHECK(k.Q(x, x) == doctest::Approx((lambda / (2.0 * alpha)) * (x - D)).epsilon(1e-14));
  }
}

TEST_CASE("Goursat residual converges at second order") {
  const auto k = kernel_solution(20.0, 1.0, 1.0);
  const auto r64 = kernel_residual(k, 64);
  const auto r128 = kernel_residual(k, 128);
  CHECK(r64.p_max / r128.p_max >= 3.0);
  CHECK(r64.q_max / r128.q_max >= 3.0);
  CHECK(kernel_residual(kernel_solution(0.0, 1.0, 1.0), 32).max() == 0.0);
  CHECK_THROWS_AS(kernel_residual(k, 8), InvalidArgument);
}

TEST_CASE("forward and inverse transformations compose to the identity") {
  const auto k = kernel_solution(20.0, 1.0, 1.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> coef(0.0, 1.0);
  const std::size_t n = 4001;
  std::vector<double> w(n);
  std::array<double, 5> a{};
  for (auto& c : a) c = coef(rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / (n - 1);
    w[i] = 0.0;
    for (std::size_t m = 0; m < a.size(); ++m) w[i] += a[m] * std::cos(std::numbers::pi * m * x);
  }
  const auto u = volterra_transform([&](double x, double y) { return k.P(x, y); }, w, 1.0);
  const auto back = volterra_transform([&](double x, double y) { return k.Q(x, y); }, u, 1.0);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err = std::max(err, std::abs(back[i] - w[i]));
    scale = std::max(scale, std::abs(w[i]));
  }
  CHECK(err <= 1e-6 * scale);
}

TEST_CASE("gains are traces of the kernel") {
  const double lambda = 0.5, alpha = 0.2, D = 0.8;
  const auto k = kernel_solution(lambda, alpha, D);
  CHECK(gain_p2(D, lambda, alpha) == -k.P(0.0, 0.0));
  auto mismatch = [&](double d) {
    double e = 0.0;
    for (double x : {0.1, 0.3, 0.5, 0.7}) {
      const double py = (k.P(x, d) - k.P(x, 0.0)) / d;
      e = std::max(e, std::abs(gain_p1(x, D, lambda, alpha) + alpha * py));
    }
    return e;
  };
  const double e1 = mismatch(1e-3), e2 = mismatch(5e-4);
  CHECK(e1 < 1e-2 * gain_p1(0.1, D, lambda, alpha));
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("H1 error norm") {
  StefanState plant{0.5, std::vector<double>(101, 3.0), 0.0, true};
  ObserverState obs{0.5, std::vector<double>(101, 3.0), 0.0};
  auto n0 = h1_error_norm(plant, obs);
  CHECK(n0.l2 == 0.0);
  CHECK(n0.h1_semi == 0.0);

  for (auto& v : obs.theta_hat) v = 1.0;
  auto nc = h1_error_norm(plant, obs);
  CHECK(nc.l2 == doctest::Approx(2.0 * std::sqrt(0.5)));
  CHECK(nc.h1_semi == doctest::Approx(0.0));

  const double s = 0.5;
  for (std::size_t i = 0; i < 101; ++i) {
    plant.theta[i] = std::sin(std::numbers::pi * i / 100.0);
    obs.theta_hat[i] = 0.0;
  }
  const auto ns = h1_error_norm(plant, obs);
  CHECK(ns.h1_semi == doctest::Approx(std::numbers::pi / s * std::sqrt(s / 2.0)).epsilon(0.01));
  CHECK(ns.l2 == doctest::Approx(std::sqrt(s / 2.0)).epsilon(0.01));
  obs.s_hat = 0.0;
  CHECK_THROWS_AS(h1_error_norm(plant, obs), InvalidArgument);
}

TEST_CASE("zero error or zero gain reduces to the plant") {
  StefanParams p;
  std::mt19937_64 rng(11);
  const auto theta = random_profile(rng, 25, p.t_melt);
  const double s = 0.12, q = 8e4;
  const auto plant = stefan::immobilized_rhs({s, theta, 0.0, true}, p, q);

  const auto full = observer_rhs_full({s, theta, 0.0}, s, plant.ds, theta.front(), q, {0.02}, p);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(full.dtheta[i] == plant.dtheta[i]);

  const auto other = random_profile(rng, 25, p.t_melt);
  const auto plant_other = stefan::immobilized_rhs({s, other, 0.0, true}, p, q);
  const auto zero_gain = observer_rhs_full({s, other, 0.0}, s, plant_other.ds, theta.front(), q, {0.0}, p);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(zero_gain.dtheta[i] == doctest::Approx(plant_other.dtheta[i]).epsilon(1e-12));

  const auto joint = observer_rhs_joint({s, theta, 0.0}, theta.front(), q, {0.02, 1e-5}, p);
  CHECK(joint.ds == plant.ds);
  for (std::size_t i = 0; i < theta.size(); ++i) CHECK(joint.dtheta[i] == plant.dtheta[i]);

  const auto base = baseline_observer_rhs({s, other, 0.0}, theta.front(), q, 0.0, p);
  CHECK(base.ds == doctest::Approx(plant_other.ds));
}

TEST_CASE("plant minus observer gives the error system") {
  StefanParams p;
  std::mt19937_64 rng(5);
  const std::size_t n = 21;
  const double s = 0.1, q = 1e5, lambda = 0.05;
  const auto theta = random_profile(rng, n, p.t_melt);
  const auto theta_hat = random_profile(rng, n, p.t_melt);
  const auto plant = stefan::immobilized_rhs({s, theta, 0.0, true}, p, q);
  const auto obs = observer_rhs_full({s, theta_hat, 0.0}, s, plant.ds, theta.front(), q, {lambda}, p);

  const double e0 = theta.front() - theta_hat.front();
  const double dxi = 1.0 / (n - 1);
  const double diff = p.alpha() / (s * s);
  std::vector<double> err(n);
  for (std::size_t i = 0; i < n; ++i) err[i] = theta[i] - theta_hat[i];
  // err_t = alpha err_xx + (x sdot / s) err_x - p1 err(0); err_x(0) = -p2 err(0); err(s) = 0.
  const double ghost = err[1] - 2.0 * dxi * s * (-gain_p2(s, lambda, p.alpha()) * e0);
  CHECK(plant.dtheta[0] - obs.dtheta[0] ==
        doctest::Approx(diff * (err[1] - 2.0 * err[0] + ghost) / (dxi * dxi) - gain_p1(0.0, s, lambda, p.alpha()) * e0));
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double xi = i * dxi;
    const double expected = diff * (err[i + 1] - 2.0 * err[i] + err[i - 1]) / (dxi * dxi) +
                            xi * plant.ds / s * (err[i + 1] - err[i - 1]) / (2.0 * dxi) -
                            gain_p1(xi * s, s, lambda, p.alpha()) * e0;
    CHECK(plant.dtheta[i] - obs.dtheta[i] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("injection signs") {
  StefanParams p;
  std::vector<double> theta_hat(21, p.t_melt);
  const ObserverState obs{0.1, theta_hat, 0.0};
  const auto r = observer_rhs_joint(obs, p.t_melt + 5.0, 0.0, {0.02, 1e-5}, p);
  CHECK(r.ds > 0.0);
  CHECK(r.dtheta[5] > 0.0);
  CHECK_THROWS_AS(observer_rhs_joint({1e-9, theta_hat, 0.0}, p.t_melt, 0.0, {}, p), ValidityHalt);
  CHECK_THROWS_AS(observer_rhs_full(obs, 0.1, 0.0, NAN, 0.0, {}, p), InvalidArgument);
}

TEST_CASE("exact initial estimate tracks the plant") {
  StefanEstimationScenario sc;
  sc.mode = StefanObserverMode::Joint;
  sc.observer_bump = sc.plant_bump;
  sc.t_end = 20.0;
  const auto run = run_stefan_estimation(sc);
  CHECK_FALSE(run.halted);
  for (const auto& smp : run.samples) {
    CHECK(smp.norms.h1 < 1e-9);
    CHECK(smp.s_hat == doctest::Approx(smp.s).epsilon(1e-12));
  }
}

TEST_CASE("full observer error shrinks") {
  StefanEstimationScenario sc;
  sc.mode = StefanObserverMode::Full;
  sc.t_end = 100.0;
  const auto run = run_stefan_estimation(sc);
  CHECK_FALSE(run.halted);
  CHECK(run.samples.back().norms.h1 < 0.2 * run.samples.front().norms.h1);
}

TEST_CASE("mode names round trip") {
  for (auto m : {StefanObserverMode::Full, StefanObserverMode::Joint, StefanObserverMode::Baseline,
                 StefanObserverMode::OpenLoop}) {
    CHECK(stefan_mode_from_string(to_string(m)) == m);
  }
  CHECK_THROWS_AS(stefan_mode_from_string("nope"), InvalidArgument);
}
