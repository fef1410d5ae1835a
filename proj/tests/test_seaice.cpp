#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "phasest/metrics.hpp"
#include "phasest/seaice.hpp"

using namespace phasest;
using namespace phasest::seaice;

namespace {

double series_i(int nu, double z) {
  double sum = 0.0;
  for (int m = 0; m < 40; ++m) {
    sum += std::pow(z / 2.0, 2 * m + nu) / (std::tgamma(m + 1.0) * std::tgamma(m + nu + 1.0));
  }
  return sum;
}

SeaIceState snow_free_linear(std::size_t n, double H, double top, const SeaIceParams& p) {
  SeaIceState s;
  s.H = H;
  s.h = 0.0;
  s.snow_active = false;
  s.t_snow.assign(10, top);
  s.t_ice.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = static_cast<double>(i) / static_cast<double>(n - 1);
    s.t_ice[i] = top + (p.t_m2 - top) * xi;
  }
  return s;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("phasest_seaice_" + name);
}

}  // namespace

TEST_CASE("salinity profile") {
  const SalinitySpec spec;
  CHECK(salinity(0.0, 2.0, spec) == 0.0);
  CHECK(salinity(2.0, 2.0, spec) == doctest::Approx(3.2).epsilon(1e-14));
  const double r = 0.5;
  const double oracle = 1.6 * (1.0 - std::cos(std::numbers::pi * std::pow(r, 0.407 / (0.573 + r))));
  CHECK(salinity(1.0, 2.0, spec) == doctest::Approx(oracle).epsilon(1e-14));
  // depends on x/H only
  CHECK(salinity(0.7, 1.4, spec) == doctest::Approx(salinity(1.0, 2.0, spec)).epsilon(1e-14));
}

TEST_CASE("effective coefficients") {
  const SeaIceParams p;
  CHECK(p.gamma1() == 18000.0);
  auto co = effective_coeffs(-5.0, 0.0, p);
  CHECK(co.c == 2110.0);
  CHECK(co.k == 2.034);
  co = effective_coeffs(-1.0, 1.0, p);
  CHECK(co.c == doctest::Approx(20110.0));
  CHECK(co.k == doctest::Approx(2.034 - 0.117));
  // warmer brine-rich ice conducts less
  CHECK(effective_coeffs(-2.0, 3.0, p).k < effective_coeffs(-10.0, 3.0, p).k);
  CHECK_THROWS_AS(effective_coeffs(0.0, 1.0, p), InvalidArgument);
  CHECK_THROWS_AS(effective_coeffs(-5e-4, 1.0, p), InvalidArgument);
}

TEST_CASE("parameter validation") {
  SeaIceParams p;
  CHECK_NOTHROW(p.validate());
  p.k0 = -1.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
}

TEST_CASE("monthly forcing totals") {
  const auto f = MonthlyForcing::table1();
  CHECK(f.month(0).total() == doctest::Approx(187.0));
  CHECK(f.month(2).total() == doctest::Approx((1.0 - 0.83) * 30.7 + 166.0 + 11.6 - 0.484));
  CHECK(f.month(5).total() == doctest::Approx(0.22 * 310.0 + 291.0 - 6.30 - 11.3));
  CHECK_FALSE(f.month(11).albedo.has_value());
  CHECK(MonthlyForcing::month_at(0.0) == 0);
  CHECK(MonthlyForcing::month_at(1.5 * kSecondsPerMonth) == 1);
  CHECK(MonthlyForcing::month_at(12.5 * kSecondsPerMonth) == 0);
  CHECK(MonthlyForcing::month_at(0.5 * kSecondsPerMonth, 11) == 11);
  CHECK(MonthlyForcing::month_at(1.5 * kSecondsPerMonth, 11) == 0);
  CHECK(f.total_flux_at(1.5 * kSecondsPerMonth) == f.month(1).total());
}

TEST_CASE("forcing asset matches the built-in table") {
  const auto loaded = MonthlyForcing::load_csv(std::string(PHASEST_ASSET_DIR) + "/seaice_forcing_table1.csv");
  const auto built = MonthlyForcing::table1();
  for (std::size_t m = 0; m < 12; ++m) {
    CAPTURE(m);
    const auto& a = loaded.month(m);
    const auto& b = built.month(m);
    CHECK(a.fr == b.fr);
    CHECK(a.fl_long == b.fl_long);
    CHECK(a.fs == b.fs);
    CHECK(a.fl == b.fl);
    CHECK(a.albedo == b.albedo);
  }
}

TEST_CASE("forcing csv errors") {
  const auto path = temp_file("bad.csv");
  {
    std::ofstream(path) << "month,a,b\n1,0,0\n";
  }
  CHECK_THROWS_AS(MonthlyForcing::load_csv(path.string()), InvalidArgument);
  {
    std::ofstream(path) << "month,Fr,FL,Fs,Fl,albedo\n1,0,168,19,0,\n";
  }
  CHECK_THROWS_AS(MonthlyForcing::load_csv(path.string()), InvalidArgument);
  {
    std::ofstream(path) << "month,Fr,FL,Fs,Fl,albedo\n13,0,168,19,0,\n";
  }
  CHECK_THROWS_AS(MonthlyForcing::load_csv(path.string()), InvalidArgument);
  {
    std::ofstream(path) << "month,Fr,FL,Fs,Fl,albedo\n1,x,168,19,0,\n";
  }
  CHECK_THROWS_AS(MonthlyForcing::load_csv(path.string()), InvalidArgument);
  CHECK_THROWS_AS(MonthlyForcing::load_csv("/nonexistent/forcing.csv"), InvalidArgument);
  std::filesystem::remove(path);
}

TEST_CASE("surface energy balance") {
  const SeaIceParams p;
  const double k = p.k0, dx = 0.028, t1 = -20.0, t2 = -19.5;
  const auto sol = solve_surface(187.0, k, t1, t2, dx, p);
  REQUIRE_FALSE(sol.clamped);
  const double T = sol.temperature;
  const double resid =
      187.0 - p.i0 - p.sigma * std::pow(T + 273.0, 4) + k * (-3.0 * T + 4.0 * t1 - t2) / (2.0 * dx);
  CHECK(std::abs(resid) <= 1e-8);
  CHECK(std::abs(sol.residual) <= 1e-8);
  CHECK(sol.melt_rate == 0.0);
  CHECK(T < p.t_m1);

  const auto hot = solve_surface(600.0, k, -0.5, -0.7, dx, p);
  CHECK(hot.clamped);
  CHECK(hot.temperature == p.t_m1);
  CHECK(hot.melt_rate == doctest::Approx(hot.residual / p.q_latent));
  CHECK(hot.melt_rate > 0.0);

  auto state = snow_free_linear(50, 2.0, -1.0, p);
  CHECK(surface_step(state, 600.0, p).h_dot < 0.0);
  CHECK(surface_step(state, 187.0, p).h_dot == 0.0);
}

TEST_CASE("rhs matches the direct discretization with salinity off") {
  const SeaIceParams p;
  const std::size_t n = 41;
  const double H = 2.5, top = -20.0;
  const auto s = snow_free_linear(n, H, top, p);
  const auto d = seaice_rhs(s, 187.0, 0.0, p, false);
  const double slope = (p.t_m2 - top) / H;
  CHECK(d.bottom_rate == doctest::Approx((p.k0 * slope - p.f_w) / p.q_latent).epsilon(1e-10));
  CHECK(d.top_rate == 0.0);
  CHECK(d.dH == doctest::Approx(d.bottom_rate - d.top_rate));
  CHECK(d.d_ice.back() == 0.0);
  for (std::size_t i = 5; i + 1 < n; i += 7) {
    const double xi = static_cast<double>(i) / static_cast<double>(n - 1);
    const double source = p.i0 * p.kappa_i * std::exp(-p.kappa_i * xi * H) / (p.rho * p.c0);
    CAPTURE(i);
    CHECK(d.d_ice[i] == doctest::Approx(source + slope * d.bottom_rate * xi).epsilon(1e-9));
  }
}

TEST_CASE("salinity raises heat capacity in the rhs") {
  const SeaIceParams p;
  const std::size_t n = 41;
  const double H = 2.5, top = -20.0;
  const auto s = snow_free_linear(n, H, top, p);
  const auto d = seaice_rhs(s, 187.0, 0.0, p, true);
  const double slope = (p.t_m2 - top) / H;
  for (std::size_t i = 5; i + 1 < n; i += 7) {
    const double xi = static_cast<double>(i) / static_cast<double>(n - 1);
    const double sal = salinity(xi, 1.0, p.salinity);
    const double c = p.c0 + p.gamma1() * sal / (s.t_ice[i] * s.t_ice[i]);
    const double source = p.i0 * p.kappa_i * std::exp(-p.kappa_i * xi * H) / (p.rho * c);
    CAPTURE(i);
    CHECK(d.d_ice[i] == doctest::Approx(source + slope * d.bottom_rate * xi).epsilon(1e-9));
  }
  const double k_bottom = p.k0 + p.gamma2 * 3.2 / p.t_m2;
  CHECK(d.bottom_rate == doctest::Approx((k_bottom * slope - p.f_w) / p.q_latent).epsilon(1e-10));
}

TEST_CASE("penetrating shortwave integrates to the absorbed total") {
  const SeaIceParams p;
  const double H = 2.0;
  const std::size_t n = 2001;
  std::vector<double> src(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = H * static_cast<double>(i) / static_cast<double>(n - 1);
    src[i] = p.i0 * p.kappa_i * std::exp(-p.kappa_i * x);
  }
  const double total = numerics::integrate_simpson(src, H / static_cast<double>(n - 1));
  CHECK(total == doctest::Approx(p.i0 * (1.0 - std::exp(-p.kappa_i * H))).epsilon(1e-10));
}

TEST_CASE("initial state") {
  const SeaIceParams p;
  const auto f = MonthlyForcing::table1();
  SeaIceOptions o;
  const auto s = initial_state(p, f, 0, 2.8, 0.3, 1.0, o);
  CHECK(s.snow_active);
  CHECK(s.t_ice.size() == o.n_ice);
  CHECK(s.t_snow.size() == o.n_snow);
  CHECK(s.t_ice.back() == p.t_m2);
  CHECK(s.surface_temperature() < p.t_m1);
  CHECK(s.surface_temperature() < s.t_ice.front());

  const double t0 = initial_top_temperature(p, f.month(0).total(), 2.8, 0.0);
  const double resid = f.month(0).total() - p.i0 - p.sigma * std::pow(t0 + 273.0, 4) + p.k0 * (p.t_m2 - t0) / 2.8;
  CHECK(std::abs(resid) < 1e-8);

  const auto bare = initial_state(p, f, 0, 2.8, 0.01, 0.0, o);
  CHECK_FALSE(bare.snow_active);
  CHECK_THROWS_AS(initial_state(p, f, 0, -1.0, 0.3, 1.0, o), InvalidArgument);
  o.n_ice = 3;
  CHECK_THROWS_AS(initial_state(p, f, 0, 2.8, 0.3, 1.0, o), InvalidArgument);
}

TEST_CASE("annual cycle reaches a periodic orbit") {
  const SeaIceParams p;
  const auto f = MonthlyForcing::table1();
  SeaIceOptions o;
  o.output_dt = 10.0 * kSecondsPerDay;
  const auto init = initial_state(p, f, 0, 2.8, 0.3, 1.0, o);
  const auto traj = simulate_annual(p, f, init, 4, o);
  const auto& a = traj.annual;
  REQUIRE(a.max_thickness.size() == 4);
  CHECK(a.periodicity(2) <= 0.05);
  for (std::size_t y = 2; y < 4; ++y) {
    CAPTURE(y);
    CHECK(a.month_of_max[y] >= 2);
    CHECK(a.month_of_max[y] <= 5);
    CHECK(a.month_of_min[y] >= 7);
    CHECK(a.month_of_min[y] <= 9);
    CHECK(a.max_thickness[y] > a.min_thickness[y]);
  }
  for (const auto& s : traj.states) CHECK(s.H > 0.5);
}

TEST_CASE("observer gains") {
  const SeaIceParams p;
  const SeaIceObserverParams o;
  const double H = 2.8;
  const auto g = observer_gains(H, o, p, 101);
  const double D = p.diffusivity(), beta = p.beta();
  CHECK(g.p2 == 0.0);
  CHECK(g.p1.front() == 0.0);
  CHECK(g.p3 == doctest::Approx(-o.lambda * H / (2.0 * beta) - o.epsilon).epsilon(1e-14));
  CHECK(g.p4 == doctest::Approx(o.c - 0.5 * o.lambda * (1.0 - o.lambda * H * H / (8.0 * D)) +
                                beta * o.lambda / (2.0 * D) * o.epsilon * H)
                    .epsilon(1e-14));

  const double x = 1.3, lam = o.lambda;
  const double z = std::sqrt(lam / D * (H * H - x * x));
  const double oracle = o.c * lam * x / beta * series_i(1, z) / z +
                        (o.epsilon * H / D - 3.0 / beta) * lam * lam * x * series_i(2, z) / (z * z) +
                        lam * lam * lam * x * x * x / (D * beta) * series_i(3, z) / (z * z * z);
  CHECK(gain_p1(x, H, o, D, beta) == doctest::Approx(oracle).epsilon(1e-10));

  // continuous up to x = H where z = 0
  const double at_end = gain_p1(H, H, o, D, beta);
  CHECK(gain_p1(H * (1.0 - 1e-7), H, o, D, beta) == doctest::Approx(at_end).epsilon(1e-5));
  CHECK(at_end == doctest::Approx(o.c * lam * H / (2.0 * beta) + (o.epsilon * H / D - 3.0 / beta) * lam * lam * H / 8.0 +
                                  lam * lam * lam * H * H * H / (48.0 * D * beta))
                      .epsilon(1e-12));

  CHECK_THROWS_AS(gain_p1(H * 1.01, H, o, D, beta), InvalidArgument);
  CHECK_THROWS_AS(observer_gains(0.0, o, p, 10), InvalidArgument);

  SeaIceObserverParams ol;
  ol.open_loop = true;
  const auto z0 = observer_gains(H, ol, p, 11);
  for (double v : z0.p1) CHECK(v == 0.0);
  CHECK(z0.p3 == 0.0);
  CHECK(z0.p4 == 0.0);
}

TEST_CASE("observer parameter checks") {
  SeaIceObserverParams o;
  CHECK_NOTHROW(o.validate());
  CHECK(o.c_condition_plausible());
  o.lambda = 0.0;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  o.lambda = 5e-6;
  o.delta1 = -1.5;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
}

TEST_CASE("observer with zero error copies the salinity-free plant") {
  const SeaIceParams p;
  const std::size_t n = 41;
  auto s = snow_free_linear(n, 2.5, -20.0, p);
  for (std::size_t i = 1; i + 1 < n; ++i) s.t_ice[i] += 0.5 * std::sin(3.0 * static_cast<double>(i) / (n - 1));
  apply_constraints(s, 187.0, p);
  const auto d = seaice_rhs(s, 187.0, 0.0, p, false);
  SeaIceObserverState obs{s.H, s.t_ice, 0.0};
  const SeaIceObserverParams o;
  const auto g = observer_gains(s.H, o, p, n);
  const auto od = observer_rhs(obs, s.H, s.t_ice.front(), d.top_rate, d.bottom_rate, g, o, p);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    CAPTURE(i);
    CHECK(od.d_t[i] == doctest::Approx(d.d_ice[i]).epsilon(1e-10));
  }
  CHECK(od.dH_hat == doctest::Approx(d.dH).epsilon(1e-9));
}

TEST_CASE("output injection acts through p1 and the boundaries") {
  const SeaIceParams p;
  const std::size_t n = 41;
  const auto s = snow_free_linear(n, 2.5, -20.0, p);
  const SeaIceObserverParams o;
  const auto g = observer_gains(s.H, o, p, n);
  SeaIceObserverState a{s.H, s.t_ice, 0.0};
  SeaIceObserverState b = a;
  b.H_hat = s.H - 1e-3;
  const auto da = observer_rhs(a, s.H, s.t_ice.front(), 0.0, 0.0, g, o, p);
  const auto db = observer_rhs(b, s.H, s.t_ice.front(), 0.0, 0.0, g, o, p);
  const std::size_t i = n / 2;
  CHECK(db.d_t[i] - da.d_t[i] == doctest::Approx(-g.p1[i] * 1e-3).epsilon(1e-8));
  CHECK(db.d_t[i] < da.d_t[i]);

  apply_observer_boundaries(b, s.H, -15.0, g, p);
  CHECK(b.t_hat.front() == -15.0);
  CHECK(b.t_hat.back() == doctest::Approx(p.t_m2 - g.p3 * 1e-3));
  CHECK(b.t_hat.back() > p.t_m2);

  SeaIceObserverState dead{0.0, s.t_ice, 0.0};
  CHECK_THROWS_AS(observer_rhs(dead, s.H, -15.0, 0.0, 0.0, g, o, p), ValidityHalt);
}

TEST_CASE("estimated initial profile") {
  const auto prof = estimate_initial_profile(-20.0, 2.0, -1.8, 0.25, 201);
  CHECK(prof.front() == -20.0);
  CHECK(prof.back() == -1.8);
  const auto it = std::min_element(prof.begin(), prof.end());
  CHECK(static_cast<double>(it - prof.begin()) == doctest::Approx(50.0));
  CHECK_THROWS_AS(estimate_initial_profile(-20.0, 2.0, -1.8, 0.5, 11), InvalidArgument);
}

TEST_CASE("estimation run starts from the preset error and closes it") {
  SeaIceEstimationConfig cfg;
  cfg.t_end = 4.0 * kSecondsPerDay;
  const auto run = run_seaice_estimation(cfg);
  REQUIRE(run.samples.size() > 10);
  CHECK(run.samples.front().H_hat == run.samples.front().H);
  CHECK(run.samples.front().l2_error > 5.0);
  CHECK(run.samples.back().l2_error < 0.1 * run.samples.front().l2_error);

  cfg.observer.open_loop = true;
  const auto ol = run_seaice_estimation(cfg);
  CHECK(ol.samples.back().l2_error > run.samples.back().l2_error);
  CHECK(ol.samples.front().l2_error == doctest::Approx(run.samples.front().l2_error));
}

TEST_CASE("larger lambda decays faster early and overshoots more") {
  SeaIceEstimationConfig cfg;
  cfg.t_end = 3.0 * kSecondsPerDay;
  std::vector<double> overshoot, early;
  for (double lam : {5e-7, 5e-6, 1e-5}) {
    cfg.observer.lambda = lam;
    const auto run = run_seaice_estimation(cfg);
    double over = 0.0;
    for (const auto& s : run.samples) {
      over = std::max(over, s.max_overshoot);
      if (std::abs(s.time - 0.25 * kSecondsPerDay) < 1.0) early.push_back(s.l2_error);
    }
    overshoot.push_back(over);
  }
  REQUIRE(early.size() == 3);
  CHECK(overshoot[0] <= overshoot[1]);
  CHECK(overshoot[1] < overshoot[2]);
  CHECK(early[1] < early[0]);
  CHECK(early[2] < early[1]);
}

TEST_CASE("robustness metrics on a synthetic run") {
  SeaIceEstimationRun run;
  for (int k = 0; k <= 10; ++k) {
    SeaIceEstimationSample s;
    s.time = k * kSecondsPerDay;
    s.H = 2.0;
    s.H_hat = 2.0 - (k <= 3 ? 0.5 : 0.05);
    s.l2_error = k == 0 ? 4.0 : 1.0;
    run.samples.push_back(s);
  }
  const auto m = robustness_metrics(run, 0.1, 5.0);
  CHECK(m.initial_profile_error == 4.0);
  CHECK(m.band == doctest::Approx(0.4));
  CHECK(m.peak_thickness_error == doctest::Approx(0.5));
  CHECK(m.settle_day == doctest::Approx(4.0));
  CHECK(m.tail_thickness_error == doctest::Approx(0.05));
  CHECK(m.tail_profile_error == 1.0);
  CHECK_THROWS_AS(robustness_metrics(SeaIceEstimationRun{}), InvalidArgument);
}

TEST_CASE("perturbed observer stays bounded") {
  SeaIceEstimationConfig cfg;
  cfg.t_end = 6.0 * kSecondsPerDay;
  const auto run = robustness_run(cfg, 0.3, -0.3, 0.4);
  for (const auto& s : run.samples) {
    CHECK(std::isfinite(s.l2_error));
    CHECK(std::abs(s.H - s.H_hat) < 0.01);
  }
  CHECK(run.samples.back().l2_error < 0.5 * run.samples.front().l2_error);
}
