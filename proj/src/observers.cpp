#include "phasest/observers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phasest/numerics.hpp"

namespace phasest::observers {

namespace {

using numerics::bessel_ratio_i;

// Observer PDE on the normalized grid over [0, s] with output error e = Y - T_hat(0).
void injected_pde_rhs(std::span<const double> theta, double s, double s_rate, double q_c, double error,
                      double lambda, const stefan::StefanParams& params, std::span<double> dtheta) {
  const std::size_t n = theta.size();
  if (n < 3) throw InvalidArgument("observer grid needs at least 3 nodes");
  if (!(s > 0.0)) throw InvalidArgument("observer domain must be positive");
  const double dxi = 1.0 / static_cast<double>(n - 1);
  const double alpha = params.alpha();
  const double diff = alpha / (s * s);
  const double adv = s_rate / s;
  const bool inject = lambda != 0.0 && error != 0.0;

  const double p2 = gain_p2(s, lambda, alpha);
  const double flux_xi = s * (-q_c / params.k + p2 * error);
  const double ghost = theta[1] - 2.0 * dxi * flux_xi;
  dtheta[0] = diff * (theta[1] - 2.0 * theta[0] + ghost) / (dxi * dxi);
  if (inject) dtheta[0] += gain_p1(0.0, s, lambda, alpha) * error;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double xi = static_cast<double>(i) * dxi;
    const double lap = (theta[i + 1] - 2.0 * theta[i] + theta[i - 1]) / (dxi * dxi);
    const double grad = (theta[i + 1] - theta[i - 1]) / (2.0 * dxi);
    dtheta[i] = diff * lap + xi * adv * grad;
    if (inject) dtheta[i] += gain_p1(xi * s, s, lambda, alpha) * error;
  }
  dtheta[n - 1] = 0.0;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw InvalidArgument(std::string("non-finite measurement: ") + what);
}

}  // namespace

double gain_p1(double x, double s_meas, double lambda, double alpha) {
  if (!(s_meas > 0.0)) throw InvalidArgument("gain_p1: interface must be positive");
  const double tol = 1e-12 * s_meas;
  if (x < -tol || x > s_meas + tol) throw InvalidArgument("gain_p1: x outside [0, s]");
  if (lambda == 0.0) return 0.0;
  x = std::clamp(x, 0.0, s_meas);
  // s^2 - (x - s)^2 = x (2s - x); dividing by it is the same as (lambda/alpha) / z^2.
  const double z2 = lambda / alpha * x * (2.0 * s_meas - x);
  const double z = std::sqrt(std::max(z2, 0.0));
  return lambda * lambda / alpha * s_meas * (s_meas - x) * bessel_ratio_i(2, z);
}

double gain_p2(double s_meas, double lambda, double alpha) { return -lambda * s_meas / (2.0 * alpha); }

ObserverRhs observer_rhs_full(const ObserverState& obs, double y1, double y1_rate, double y2, double q_c,
                              const FullObserverConfig& cfg, const stefan::StefanParams& params) {
  check_finite(y1, "Y1");
  check_finite(y1_rate, "dY1/dt");
  check_finite(y2, "Y2");
  if (!(y1 > 0.0)) throw InvalidArgument("measured interface must be positive");
  ObserverRhs out;
  out.dtheta.resize(obs.theta_hat.size());
  injected_pde_rhs(obs.theta_hat, y1, y1_rate, q_c, y2 - obs.theta_hat.front(), cfg.lambda, params, out.dtheta);
  out.ds = y1_rate;
  return out;
}

ObserverRhs observer_rhs_joint(const ObserverState& obs, double y, double q_c, const JointObserverConfig& cfg,
                               const stefan::StefanParams& params) {
  check_finite(y, "Y");
  const double s_min = stefan::kMinInterfaceFraction * params.domain_length;
  if (!(obs.s_hat > s_min)) throw ValidityHalt("estimated interface collapsed below s_min");
  const double error = y - obs.theta_hat.front();
  ObserverRhs out;
  out.dtheta.resize(obs.theta_hat.size());
  out.ds = -params.beta() / obs.s_hat * stefan::interface_gradient_xi(obs.theta_hat) + cfg.l_gain * error;
  injected_pde_rhs(obs.theta_hat, obs.s_hat, out.ds, q_c, error, cfg.lambda, params, out.dtheta);
  return out;
}

ObserverRhs baseline_observer_rhs(const ObserverState& obs, double y, double q_c, double l_gain,
                                  const stefan::StefanParams& params) {
  return observer_rhs_joint(obs, y, q_c, JointObserverConfig{0.0, l_gain}, params);
}

KernelSet::KernelSet(double lambda, double alpha, double domain) : lambda_(lambda), alpha_(alpha), domain_(domain) {
  if (!(domain > 0.0)) throw InvalidArgument("kernel domain must be positive");
  if (!(alpha > 0.0)) throw InvalidArgument("kernel diffusivity must be positive");
}

double KernelSet::P(double x, double y) const {
  const double lp = lambda_ / alpha_;
  if (lp == 0.0) return 0.0;
  const double a = domain_ - y;
  const double b = domain_ - x;
  const double z = std::sqrt(std::max(lp * (a * a - b * b), 0.0));
  return lp * b * numerics::bessel_ratio_i(1, z);
}

double KernelSet::Q(double x, double y) const {
  const double lp = lambda_ / alpha_;
  if (lp == 0.0) return 0.0;
  const double a = domain_ - y;
  const double b = domain_ - x;
  const double z = std::sqrt(std::max(lp * (a * a - b * b), 0.0));
  return -lp * b * numerics::bessel_ratio_j1(z);
}

KernelSet kernel_solution(double lambda, double alpha, double domain) { return KernelSet(lambda, alpha, domain); }

KernelResidual kernel_residual(const KernelSet& kernels, std::size_t grid_n) {
  if (grid_n < 16) throw InvalidArgument("kernel_residual needs grid_n >= 16");
  const double h = kernels.domain() / static_cast<double>(grid_n);
  const double lp = kernels.lambda() / kernels.alpha();
  const std::size_t m = grid_n + 1;
  std::vector<double> p(m * m, 0.0), q(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      p[i * m + j] = kernels.P(i * h, j * h);
      q[i * m + j] = kernels.Q(i * h, j * h);
    }
  }
  KernelResidual r;
  const double h2 = h * h;
  for (std::size_t i = 2; i + 1 < m; ++i) {
    for (std::size_t j = 1; j < i; ++j) {
      auto at = [&](const std::vector<double>& k, std::size_t a, std::size_t b) { return k[a * m + b]; };
      const double pxx = (at(p, i + 1, j) - 2.0 * at(p, i, j) + at(p, i - 1, j)) / h2;
      const double pyy = (at(p, i, j + 1) - 2.0 * at(p, i, j) + at(p, i, j - 1)) / h2;
      const double qxx = (at(q, i + 1, j) - 2.0 * at(q, i, j) + at(q, i - 1, j)) / h2;
      const double qyy = (at(q, i, j + 1) - 2.0 * at(q, i, j) + at(q, i, j - 1)) / h2;
      r.p_max = std::max(r.p_max, std::abs(pxx - pyy + lp * at(p, i, j)));
      r.q_max = std::max(r.q_max, std::abs(qxx - qyy - lp * at(q, i, j)));
    }
  }
  return r;
}

std::vector<double> volterra_transform(const Kernel& kernel, const std::vector<double>& profile, double domain) {
  const std::size_t n = profile.size();
  if (n < 2) throw InvalidArgument("volterra_transform needs at least 2 samples");
  const double h = domain / static_cast<double>(n - 1);
  std::vector<double> out(n);
  std::vector<double> integrand;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) * h;
    double integral = 0.0;
    if (i > 0) {
      integrand.resize(i + 1);
      for (std::size_t j = 0; j <= i; ++j) integrand[j] = kernel(x, static_cast<double>(j) * h) * profile[j];
      integral = numerics::integrate_trapezoid(integrand, h);
    }
    out[i] = profile[i] + integral;
  }
  return out;
}

double temperature_at(std::span<const double> theta, double s, double x, double t_melt) {
  if (x >= s) return t_melt;
  return numerics::interpolate_uniform(theta, std::max(x, 0.0) / s);
}

ErrorNorms h1_error_norm(const stefan::StefanState& plant, const ObserverState& obs) {
  const double m = std::min(plant.s, obs.s_hat);
  if (!(m > 0.0)) throw InvalidArgument("h1_error_norm: empty overlap domain");
  const std::size_t n = std::max(plant.theta.size(), obs.theta_hat.size());
  const double h = m / static_cast<double>(n - 1);
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) * h;
    e[i] = numerics::interpolate_uniform(plant.theta, x / plant.s) - numerics::interpolate_uniform(obs.theta_hat, x / obs.s_hat);
  }
  std::vector<double> e2(n), ex2(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d;
    if (i == 0) d = (-3.0 * e[0] + 4.0 * e[1] - e[2]) / (2.0 * h);
    else if (i + 1 == n) d = (3.0 * e[n - 1] - 4.0 * e[n - 2] + e[n - 3]) / (2.0 * h);
    else d = (e[i + 1] - e[i - 1]) / (2.0 * h);
    e2[i] = e[i] * e[i];
    ex2[i] = d * d;
  }
  ErrorNorms out;
  out.l2 = std::sqrt(numerics::integrate_trapezoid(e2, h));
  out.h1_semi = std::sqrt(numerics::integrate_trapezoid(ex2, h));
  out.h1 = std::sqrt(out.l2 * out.l2 + out.h1_semi * out.h1_semi);
  return out;
}

std::string to_string(StefanObserverMode mode) {
  switch (mode) {
    case StefanObserverMode::Full: return "full";
    case StefanObserverMode::Joint: return "joint";
    case StefanObserverMode::Baseline: return "baseline";
    case StefanObserverMode::OpenLoop: return "openloop";
  }
  return "unknown";
}

StefanObserverMode stefan_mode_from_string(const std::string& name) {
  if (name == "full") return StefanObserverMode::Full;
  if (name == "joint") return StefanObserverMode::Joint;
  if (name == "baseline") return StefanObserverMode::Baseline;
  if (name == "openloop") return StefanObserverMode::OpenLoop;
  throw InvalidArgument("unknown Stefan observer mode '" + name + "'");
}

StefanEstimationRun run_stefan_estimation(const StefanEstimationScenario& sc) {
  const auto& params = sc.params;
  params.validate();
  const std::size_t n = sc.n_points;
  const bool full = sc.mode == StefanObserverMode::Full;
  const double s_min = stefan::kMinInterfaceFraction * params.domain_length;
  const double s_hat0 = full ? sc.s0 : sc.s_hat0;
  const double q0 = sc.input(0.0);
  const double obs_q0 = sc.observer_q0 < 0.0 ? q0 : sc.observer_q0;

  std::vector<double> y = stefan::compatible_profile(params, sc.s0, q0, sc.plant_bump, n);
  y.push_back(sc.s0);
  const auto theta_hat0 = stefan::compatible_profile(params, s_hat0, obs_q0, sc.observer_bump, n);
  y.insert(y.end(), theta_hat0.begin(), theta_hat0.end());
  y.push_back(s_hat0);

  const double lambda = sc.mode == StefanObserverMode::Full || sc.mode == StefanObserverMode::Joint ? sc.lambda : 0.0;
  const double l_gain = sc.mode == StefanObserverMode::OpenLoop || full ? 0.0 : sc.l_gain;
  const std::size_t i_s = n, i_obs = n + 1, i_shat = 2 * n + 1;

  auto rhs = [&](double t, const std::vector<double>& yy, std::vector<double>& dy) {
    const double q = sc.input(t);
    std::span<const double> th(yy.data(), n);
    stefan::immobilized_rhs(yy[i_s], th, params, q, std::span<double>(dy.data(), n), dy[i_s]);
    std::span<const double> thh(yy.data() + i_obs, n);
    std::span<double> dthh(dy.data() + i_obs, n);
    const double error = yy[0] - thh[0];
    if (full) {
      injected_pde_rhs(thh, yy[i_s], dy[i_s], q, error, lambda, params, dthh);
      dy[i_shat] = dy[i_s];
    } else {
      const double s_hat = std::max(yy[i_shat], s_min);
      const double ds = -params.beta() / s_hat * stefan::interface_gradient_xi(thh) + l_gain * error;
      injected_pde_rhs(thh, s_hat, ds, q, error, lambda, params, dthh);
      dy[i_shat] = ds;
    }
  };

  StefanEstimationRun run;
  auto record = [&](double t) {
    StefanEstimationSample smp;
    smp.time = t;
    smp.s = y[i_s];
    smp.s_hat = y[i_shat];
    stefan::StefanState plant{y[i_s], std::vector<double>(y.begin(), y.begin() + n), t, true};
    ObserverState obs{y[i_shat], std::vector<double>(y.begin() + i_obs, y.begin() + i_obs + n), t};
    smp.norms = h1_error_norm(plant, obs);
    for (std::size_t p = 0; p < kProbeFractions.size(); ++p) {
      const double x = kProbeFractions[p] * smp.s;
      smp.probe_true[p] = temperature_at(plant.theta, smp.s, x, params.t_melt);
      smp.probe_est[p] = temperature_at(obs.theta_hat, smp.s_hat, x, params.t_melt);
    }
    smp.plant_valid = stefan::validate_state(plant, params).min_excess >= -1e-9;
    run.samples.push_back(smp);
  };

  const double dxi = 1.0 / static_cast<double>(n - 1);
  numerics::Rk4Stepper stepper(y.size());
  double t = 0.0;
  record(t);
  double next_out = sc.output_dt;
  while (t < sc.t_end - 1e-12 * sc.t_end) {
    const double smallest = std::min(y[i_s], y[i_shat]);
    double h = numerics::diffusion_step_bound(dxi, params.alpha() / (smallest * smallest), sc.safety);
    const double target = std::min(next_out, sc.t_end);
    bool hit = false;
    if (t + h >= target) {
      h = target - t;
      hit = true;
    }
    try {
      stepper.step(rhs, t, y, h);
    } catch (const NumericalFailure& e) {
      run.halted = true;
      run.numerical_failure = true;
      run.halt_reason = e.what();
      break;
    }
    y[n - 1] = params.t_melt;
    y[i_obs + n - 1] = params.t_melt;
    t = hit ? target : t + h;
    if (!(y[i_s] > s_min && y[i_s] < params.domain_length)) {
      run.halted = true;
      run.halt_reason = "plant interface left (0, L)";
      record(t);
      break;
    }
    if (!(y[i_shat] > s_min) || !(y[i_shat] < params.domain_length)) {
      run.halted = true;
      run.halt_reason = "estimated interface left (s_min, L)";
      y[i_shat] = std::clamp(y[i_shat], s_min, params.domain_length);
      record(t);
      break;
    }
    if (hit) {
      record(t);
      next_out += sc.output_dt;
    }
  }
  return run;
}

}  // namespace phasest::observers
