#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "phasest/stefan.hpp"

using namespace phasest;
using namespace phasest::stefan;

namespace {

StefanParams unit_params() {
  StefanParams p;
  p.k = 1.0;
  p.rho = 1.0;
  p.cp = 1.0;
  p.latent = 1e12;
  p.t_melt = 0.0;
  p.domain_length = 2.0;
  return p;
}

double final_interface(std::size_t n, double t_end) {
  StefanParams p;
  const auto theta0 = compatible_profile(p, 0.1, 1e5, 30.0, n);
  const auto traj = simulate(p, HeatInput::constant(1e5), 0.1, theta0, t_end);
  return traj.back().s;
}

}  // namespace

TEST_CASE("params derive alpha and beta") {
  StefanParams p;
  CHECK(p.alpha() == doctest::Approx(p.k / (p.rho * p.cp)).epsilon(1e-12));
  CHECK(p.beta() == doctest::Approx(p.k / (p.rho * p.latent)).epsilon(1e-12));
  p.k = -1.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("equilibrium has zero rhs") {
  StefanParams p;
  StefanState st{0.3, std::vector<double>(21, p.t_melt), 0.0, true};
  const auto r = immobilized_rhs(st, p, 0.0);
  for (double d : r.dtheta) CHECK(d == 0.0);
  CHECK(r.ds == 0.0);
}

TEST_CASE("linear profile gives ds = beta g") {
  StefanParams p;
  const double s = 0.2, g = 50.0;
  std::vector<double> theta(31);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = p.t_melt + (s - s * i / 30.0) * g;
  const auto r = immobilized_rhs({s, theta, 0.0, true}, p, 0.0);
  CHECK(r.ds == doctest::Approx(p.beta() * g).epsilon(1e-10));
}

TEST_CASE("interior operator is second order") {
  const auto p = unit_params();
  auto max_err = [&](std::size_t n) {
    std::vector<double> theta(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(n - 1);
      theta[i] = std::sin(std::numbers::pi * (1.0 - x) / 2.0);
    }
    const auto r = immobilized_rhs({1.0, theta, 0.0, true}, p, 0.0);
    double e = 0.0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double x = static_cast<double>(i) / static_cast<double>(n - 1);
      const double exact = -std::pow(std::numbers::pi / 2.0, 2) * std::sin(std::numbers::pi * (1.0 - x) / 2.0);
      e = std::max(e, std::abs(r.dtheta[i] - exact));
    }
    return e;
  };
  const double ratio = max_err(21) / max_err(41);
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("rhs rejects bad input") {
  StefanParams p;
  CHECK_THROWS_AS(immobilized_rhs({0.0, std::vector<double>(5, p.t_melt), 0.0, true}, p, 0.0), InvalidArgument);
  CHECK_THROWS_AS(immobilized_rhs({0.1, {p.t_melt, NAN, p.t_melt}, 0.0, true}, p, 0.0), InvalidArgument);
}

TEST_CASE("validate_state") {
  StefanParams p;
  StefanState st{p.domain_length / 2.0, std::vector<double>(11, p.t_melt + 1.0), 0.0, true};
  CHECK(validate_state(st, p).valid);
  st.theta[4] = p.t_melt - 0.5;
  const auto d = validate_state(st, p);
  CHECK_FALSE(d.valid);
  CHECK(d.argmin == 4);
  CHECK(d.min_excess == doctest::Approx(-0.5));
  st.theta[4] = p.t_melt + 1.0;
  st.s = p.domain_length;
  CHECK_FALSE(validate_state(st, p).valid);
}

TEST_CASE("frozen equilibrium stays put") {
  StefanParams p;
  const auto traj = simulate(p, HeatInput::constant(0.0), 0.2, std::vector<double>(21, p.t_melt), 50.0);
  for (const auto& st : traj) CHECK(st.s == 0.2);
  for (double r : energy_balance(traj, HeatInput::constant(0.0), p)) CHECK(r == 0.0);
}

TEST_CASE("simulate rejects incompatible initial data") {
  StefanParams p;
  std::vector<double> theta(11, p.t_melt + 1.0);
  CHECK_THROWS_AS(simulate(p, HeatInput::constant(0.0), 0.2, theta, 1.0), InvalidArgument);
  theta.back() = p.t_melt;
  theta[3] = p.t_melt - 1.0;
  CHECK_THROWS_AS(simulate(p, HeatInput::constant(0.0), 0.2, theta, 1.0), InvalidArgument);
  CHECK_THROWS_AS(simulate(p, HeatInput::constant(0.0), 0.0, std::vector<double>(11, p.t_melt), 1.0), InvalidArgument);
}

TEST_CASE("constant heating melts monotonically") {
  StefanParams p;
  const auto theta0 = compatible_profile(p, 0.1, 1e5, 20.0, 41);
  SimulationOptions opt;
  opt.output_stride = 10;
  const auto traj = simulate(p, HeatInput::constant(1e5), 0.1, theta0, 60.0, opt);
  for (std::size_t i = 1; i < traj.size(); ++i) {
    CHECK(traj[i].s >= traj[i - 1].s);
    CHECK(traj[i].valid);
  }
}

TEST_CASE("interface leaving the domain halts") {
  StefanParams p;
  p.domain_length = 0.1001;
  const auto theta0 = compatible_profile(p, 0.1, 1e5, 0.0, 21);
  CHECK_THROWS_AS(simulate(p, HeatInput::constant(1e6), 0.1, theta0, 100.0), ValidityHalt);
}

TEST_CASE("randomized nonnegative inputs keep the solution physical") {
  StefanParams p;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> flux(0.0, 2e5), bump(0.0, 40.0), s0d(0.05, 0.2);
  for (int run = 0; run < 5; ++run) {
    std::vector<HeatInput::Segment> segs;
    for (int k = 0; k < 4; ++k) segs.push_back({10.0 * k, flux(rng)});
    HeatInput input(segs);
    CHECK(input.nonnegative());
    const double s0 = s0d(rng);
    const auto theta0 = compatible_profile(p, s0, input(0.0), bump(rng), 31);
    SimulationOptions opt;
    opt.output_stride = 1;
    const auto traj = simulate(p, input, s0, theta0, 40.0, opt);
    for (std::size_t i = 1; i < traj.size(); ++i) {
      CHECK(traj[i].s - traj[i - 1].s >= -1e-6 * s0);
      CHECK(validate_state(traj[i], p).min_excess >= -1e-6);
    }
  }
}

TEST_CASE("energy identity converges under refinement") {
  StefanParams p;
  auto residual = [&](std::size_t n) {
    const auto theta0 = compatible_profile(p, 0.1, 1e5, 30.0, n);
    const auto traj = simulate(p, HeatInput::constant(1e5), 0.1, theta0, 20.0);
    return std::abs(energy_balance(traj, HeatInput::constant(1e5), p).back());
  };
  const double r100 = residual(101);
  const double r200 = residual(201);
  CHECK(r100 / r200 >= 3.0);
}

TEST_CASE("interface converges at second order") {
  const double s1 = final_interface(21, 30.0);
  const double s2 = final_interface(41, 30.0);
  const double s3 = final_interface(81, 30.0);
  const double order = std::log2(std::abs(s1 - s2) / std::abs(s2 - s3));
  CHECK(order >= 1.5);
  CHECK(order <= 2.5);
}

TEST_CASE("heat input integral is exact") {
  HeatInput in({{0.0, 1.0}, {2.0, 3.0}, {5.0, 0.0}});
  CHECK(in(1.0) == 1.0);
  CHECK(in(2.0) == 3.0);
  CHECK(in(10.0) == 0.0);
  CHECK(in.integral(1.0, 6.0) == doctest::Approx(1.0 + 9.0));
  CHECK_THROWS_AS(HeatInput(std::vector<HeatInput::Segment>{}), InvalidArgument);
}
