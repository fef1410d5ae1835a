#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <vector>

#include "phasest/numerics.hpp"

using namespace phasest;
using namespace phasest::numerics;

namespace {

// Independent truncated power series for I_nu and J_nu.
double series_i(int nu, double z, int terms = 40) {
  double sum = 0.0;
  for (int m = 0; m < terms; ++m) {
    sum += std::pow(z / 2.0, 2 * m + nu) / (std::tgamma(m + 1.0) * std::tgamma(m + nu + 1.0));
  }
  return sum;
}

double series_j(int nu, double z, int terms = 40) {
  double sum = 0.0;
  for (int m = 0; m < terms; ++m) {
    const double sign = m % 2 == 0 ? 1.0 : -1.0;
    sum += sign * std::pow(z / 2.0, 2 * m + nu) / (std::tgamma(m + 1.0) * std::tgamma(m + nu + 1.0));
  }
  return sum;
}

}  // namespace

TEST_CASE("bessel_i basic values") {
  CHECK(bessel_i(0, 0.0) == 1.0);
  CHECK(bessel_i(1, 0.0) == 0.0);
  CHECK(bessel_i(1, 1.0) == doctest::Approx(series_i(1, 1.0)).epsilon(1e-13));
  CHECK(bessel_i(1, 1.0) == doctest::Approx(0.5651591039924851).epsilon(1e-13));
}

TEST_CASE("bessel_i matches the standard library across the range") {
  for (int nu = 0; nu <= 3; ++nu) {
    for (double z : {1e-6, 0.3, 1.0, 2.5, 7.0, 15.0, 29.9, 30.1, 45.0, 120.0, 400.0}) {
      const double ref = std::cyl_bessel_i(static_cast<double>(nu), z);
      const double tol = z <= 30.0 ? 1e-12 : 1e-10;
      CHECK(std::abs(bessel_i(nu, z) - ref) <= tol * std::abs(ref) + 1e-300);
    }
  }
}

TEST_CASE("bessel_i rejects bad input") {
  CHECK_THROWS_AS(bessel_i(4, 1.0), InvalidArgument);
  CHECK_THROWS_AS(bessel_i(-1, 1.0), InvalidArgument);
  CHECK_THROWS_AS(bessel_i(0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(bessel_i(0, 601.0), InvalidArgument);
}

TEST_CASE("bessel_j values") {
  CHECK(bessel_j(1, 0.0) == 0.0);
  CHECK(bessel_j(0, 0.0) == 1.0);
  CHECK(bessel_j(1, 2.404826) == doctest::Approx(series_j(1, 2.404826)).epsilon(1e-12));
  CHECK(bessel_j(1, 2.404826) == doctest::Approx(0.519147).epsilon(1e-6));
  for (int nu = 0; nu <= 2; ++nu) {
    for (double z : {0.1, 1.0, 1.99, 2.01, 5.0, 12.3, 25.0, 49.0}) {
      const double ref = std::cyl_bessel_j(static_cast<double>(nu), z);
      CHECK(std::abs(bessel_j(nu, z) - ref) <= 1e-10 * std::max(std::abs(ref), 1e-2));
    }
  }
  CHECK_THROWS_AS(bessel_j(3, 1.0), InvalidArgument);
}

TEST_CASE("bessel_ratio_i limits and continuity") {
  CHECK(bessel_ratio_i(1, 0.0) == 0.5);
  CHECK(bessel_ratio_i(2, 0.0) == 0.125);
  CHECK(bessel_ratio_i(3, 0.0) == doctest::Approx(1.0 / 48.0).epsilon(1e-15));
  CHECK(std::abs(bessel_ratio_i(1, 1e-8) - 0.5) < 1e-10);
  CHECK(std::abs(bessel_ratio_i(2, 1e-8) - 0.125) < 1e-10);
  CHECK(std::abs(bessel_ratio_i(3, 1e-8) - 1.0 / 48.0) < 1e-10);
  CHECK(bessel_ratio_j1(0.0) == 0.5);
  CHECK(bessel_ratio_j1(3.0) == doctest::Approx(std::cyl_bessel_j(1.0, 3.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("recurrence I_{nu-1} - I_{nu+1} = (2 nu / z) I_nu") {
  for (double z : {0.5, 1.0, 5.0, 20.0}) {
    for (int nu = 1; nu <= 2; ++nu) {
      const double lhs = bessel_i(nu - 1, z) - bessel_i(nu + 1, z);
      const double rhs = 2.0 * nu / z * bessel_i(nu, z);
      CHECK(std::abs(lhs - rhs) <= 1e-9 * std::abs(rhs));
    }
  }
}

TEST_CASE("d/dz (I1/z) = z * I2/z^2, second order in the step") {
  const double z = 1.7;
  auto mismatch = [&](double d) {
    const double fd = (bessel_ratio_i(1, z + d) - bessel_ratio_i(1, z - d)) / (2.0 * d);
    return std::abs(fd - z * bessel_ratio_i(2, z));
  };
  const double e1 = mismatch(1e-2);
  const double e2 = mismatch(5e-3);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("solve_tridiagonal") {
  TridiagonalSystem id{{0.0, 0.0}, {1.0, 1.0, 1.0}, {0.0, 0.0}, {3.0, -1.0, 2.0}};
  CHECK(solve_tridiagonal(id) == std::vector<double>{3.0, -1.0, 2.0});

  TridiagonalSystem two{{1.0}, {2.0, 2.0}, {1.0}, {3.0, 3.0}};
  const auto x = solve_tridiagonal(two);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(1.0));

  TridiagonalSystem zero{{1.0}, {0.0, 2.0}, {1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(solve_tridiagonal(zero), NumericalFailure);
  TridiagonalSystem bad{{1.0}, {2.0}, {1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(solve_tridiagonal(bad), InvalidArgument);
}

TEST_CASE("solve_tridiagonal residual on a diffusion matrix") {
  const std::size_t n = 200;
  TridiagonalSystem s;
  s.sub.assign(n - 1, -1.0);
  s.super.assign(n - 1, -1.0);
  s.main.assign(n, 2.5);
  s.rhs.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.rhs[i] = std::sin(0.1 * static_cast<double>(i)) + 2.0;
  const auto x = solve_tridiagonal(s);
  double rmax = 0.0, bmax = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = s.main[i] * x[i] - s.rhs[i];
    if (i > 0) r += s.sub[i - 1] * x[i - 1];
    if (i + 1 < n) r += s.super[i] * x[i + 1];
    rmax = std::max(rmax, std::abs(r));
    bmax = std::max(bmax, std::abs(s.rhs[i]));
  }
  CHECK(rmax <= 1e-10 * bmax);
}

TEST_CASE("quadrature") {
  const std::vector<double> ones(11, 1.0);
  CHECK(integrate_trapezoid(ones, 0.1) == doctest::Approx(1.0));
  const std::vector<double> ramp{0.0, 0.5, 1.0};
  CHECK(integrate_trapezoid(ramp, 0.5) == doctest::Approx(0.5));
  std::vector<double> sine(101);
  const double h = std::numbers::pi / 100.0;
  for (std::size_t i = 0; i < sine.size(); ++i) sine[i] = std::sin(h * static_cast<double>(i));
  CHECK(std::abs(integrate_trapezoid(sine, h) - 2.0) < 1e-3);
  CHECK(std::abs(integrate_simpson(sine, h) - 2.0) < 1e-7);
  CHECK_THROWS_AS(integrate_trapezoid(std::vector<double>{1.0}, 0.1), InvalidArgument);
}

TEST_CASE("rk4_step") {
  RhsFunction zero = [](double, const std::vector<double>& y) { return std::vector<double>(y.size(), 0.0); };
  CHECK(rk4_step(zero, 0.0, {2.0}, 0.1)[0] == 2.0);
  RhsFunction one = [](double, const std::vector<double>&) { return std::vector<double>{1.0}; };
  CHECK(rk4_step(one, 0.0, {2.0}, 0.1)[0] == doctest::Approx(2.1));
  RhsFunction decay = [](double, const std::vector<double>& y) { return std::vector<double>{-y[0]}; };
  CHECK(std::abs(rk4_step(decay, 0.0, {1.0}, 0.1)[0] - 0.9048375) < 1e-6);
  RhsFunction blowup = [](double, const std::vector<double>&) { return std::vector<double>{NAN}; };
  CHECK_THROWS_AS(rk4_step(blowup, 0.0, {1.0}, 0.1), NumericalFailure);
  CHECK_THROWS_AS(rk4_step(decay, 0.0, {1.0}, 0.0), InvalidArgument);
}

TEST_CASE("rk4 global order") {
  RhsFunction decay = [](double, const std::vector<double>& y) { return std::vector<double>{-y[0]}; };
  auto error = [&](int steps) {
    std::vector<double> y{1.0};
    const double h = 1.0 / steps;
    for (int i = 0; i < steps; ++i) y = rk4_step(decay, i * h, y, h);
    return std::abs(y[0] - std::exp(-1.0));
  };
  CHECK(error(10) / error(20) >= 14.0);
  CHECK(error(20) / error(40) >= 14.0);
}

TEST_CASE("GridSpec and helpers") {
  CHECK_THROWS_AS(GridSpec(2), InvalidArgument);
  GridSpec g(5);
  CHECK(g.node(0) == 0.0);
  CHECK(g.node(4) == 1.0);
  const auto nodes = g.nodes();
  for (std::size_t i = 1; i < nodes.size(); ++i) CHECK(nodes[i] > nodes[i - 1]);
  CHECK(diffusion_step_bound(0.1, 2.0) == doctest::Approx(0.4 * 0.01 / 4.0));
  const std::vector<double> v{0.0, 1.0, 4.0};
  CHECK(interpolate_uniform(v, 0.75) == doctest::Approx(2.5));
  CHECK(interpolate_uniform(v, 1.0) == 4.0);
}
