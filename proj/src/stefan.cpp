#include "phasest/stefan.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace phasest::stefan {

void StefanParams::validate() const {
  if (!(k > 0.0 && rho > 0.0 && cp > 0.0 && latent > 0.0 && domain_length > 0.0)) {
    throw InvalidArgument("Stefan parameters k, rho, cp, latent, domain_length must be positive");
  }
  if (!std::isfinite(t_melt)) throw InvalidArgument("melting temperature must be finite");
}

HeatInput::HeatInput(std::vector<Segment> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw InvalidArgument("heat input needs at least one segment");
  std::sort(segments_.begin(), segments_.end(), [](const Segment& a, const Segment& b) { return a.t_start < b.t_start; });
  for (const auto& seg : segments_) {
    if (!std::isfinite(seg.value) || !std::isfinite(seg.t_start)) throw InvalidArgument("heat input must be finite");
  }
}

HeatInput HeatInput::constant(double value) { return HeatInput({{0.0, value}}); }

double HeatInput::operator()(double t) const {
  double v = segments_.front().value;
  for (const auto& seg : segments_) {
    if (seg.t_start <= t) v = seg.value;
    else break;
  }
  return v;
}

double HeatInput::integral(double t0, double t1) const {
  if (t1 <= t0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const double a = i == 0 ? -std::numeric_limits<double>::infinity() : segments_[i].t_start;
    const double b = i + 1 < segments_.size() ? segments_[i + 1].t_start : std::numeric_limits<double>::infinity();
    const double lo = std::max(a, t0);
    const double hi = std::min(b, t1);
    if (hi > lo) total += segments_[i].value * (hi - lo);
  }
  return total;
}

bool HeatInput::nonnegative() const {
  return std::all_of(segments_.begin(), segments_.end(), [](const Segment& s) { return s.value >= 0.0; });
}

double interface_gradient_xi(std::span<const double> theta) {
  const std::size_t n = theta.size();
  const double dxi = 1.0 / static_cast<double>(n - 1);
  return (3.0 * theta[n - 1] - 4.0 * theta[n - 2] + theta[n - 3]) / (2.0 * dxi);
}

void immobilized_rhs(double s, std::span<const double> theta, const StefanParams& params, double q_c,
                     std::span<double> dtheta, double& ds) {
  const std::size_t n = theta.size();
  if (n < 3) throw InvalidArgument("Stefan grid needs at least 3 nodes");
  if (!(s > 0.0)) throw InvalidArgument("interface position must be positive");
  if (!std::isfinite(q_c)) throw InvalidArgument("heat input must be finite");
  const double dxi = 1.0 / static_cast<double>(n - 1);
  const double alpha = params.alpha();
  const double diff = alpha / (s * s);

  ds = -params.beta() / s * interface_gradient_xi(theta);
  const double adv = ds / s;

  // theta_xi(0) = -q_c s / k enters through a ghost node.
  const double flux_xi = -q_c * s / params.k;
  const double ghost = theta[1] - 2.0 * dxi * flux_xi;
  dtheta[0] = diff * (theta[1] - 2.0 * theta[0] + ghost) / (dxi * dxi);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double xi = static_cast<double>(i) * dxi;
    const double lap = (theta[i + 1] - 2.0 * theta[i] + theta[i - 1]) / (dxi * dxi);
    const double grad = (theta[i + 1] - theta[i - 1]) / (2.0 * dxi);
    dtheta[i] = diff * lap + xi * adv * grad;
  }
  dtheta[n - 1] = 0.0;
}

StefanRhs immobilized_rhs(const StefanState& state, const StefanParams& params, double q_c) {
  if (!numerics::all_finite(state.theta) || !std::isfinite(state.s)) {
    throw InvalidArgument("Stefan state contains non-finite values");
  }
  StefanRhs out;
  out.dtheta.resize(state.theta.size());
  immobilized_rhs(state.s, state.theta, params, q_c, out.dtheta, out.ds);
  return out;
}

StefanDiagnostics validate_state(const StefanState& state, const StefanParams& params) {
  StefanDiagnostics d;
  d.min_excess = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < state.theta.size(); ++i) {
    const double e = state.theta[i] - params.t_melt;
    if (e < d.min_excess) {
      d.min_excess = e;
      d.argmin = i;
    }
  }
  d.margin_low = state.s;
  d.margin_high = params.domain_length - state.s;
  d.valid = d.min_excess >= 0.0 && d.margin_low > 0.0 && d.margin_high > 0.0;
  return d;
}

std::vector<double> compatible_profile(const StefanParams& params, double s0, double q0, double bump,
                                       std::size_t n_points) {
  numerics::GridSpec grid(n_points);
  std::vector<double> theta(n_points);
  for (std::size_t i = 0; i < n_points; ++i) {
    const double x = grid.node(i) * s0;
    theta[i] = params.t_melt + q0 / params.k * (s0 - x) + bump * std::cos(std::numbers::pi * x / (2.0 * s0));
  }
  theta.back() = params.t_melt;
  return theta;
}

std::vector<StefanState> simulate(const StefanParams& params, const HeatInput& input, double s0,
                                  const std::vector<double>& theta0, double t_end, const SimulationOptions& options) {
  params.validate();
  const double s_min = kMinInterfaceFraction * params.domain_length;
  if (!(s0 > s_min && s0 < params.domain_length)) {
    throw InvalidArgument("initial interface must lie in (s_min, L)");
  }
  if (theta0.size() < 3) throw InvalidArgument("initial profile needs at least 3 nodes");
  if (std::abs(theta0.back() - params.t_melt) > 1e-9 * std::max(1.0, std::abs(params.t_melt))) {
    throw InvalidArgument("initial profile must equal the melting temperature at the interface");
  }
  for (double v : theta0) {
    if (!(v >= params.t_melt - 1e-12)) throw InvalidArgument("initial profile below melting temperature");
  }
  if (!(t_end >= 0.0)) throw InvalidArgument("horizon must be nonnegative");

  const std::size_t n = theta0.size();
  const double dxi = 1.0 / static_cast<double>(n - 1);
  std::vector<double> y(theta0);
  y.push_back(s0);

  numerics::Rk4Stepper stepper(n + 1);
  auto rhs = [&](double t, const std::vector<double>& yy, std::vector<double>& dy) {
    std::span<const double> th(yy.data(), n);
    std::span<double> dth(dy.data(), n);
    immobilized_rhs(yy[n], th, params, input(t), dth, dy[n]);
  };

  std::vector<StefanState> out;
  auto record = [&](double t) {
    StefanState st;
    st.s = y[n];
    st.theta.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n));
    st.time = t;
    const auto diag = validate_state(st, params);
    st.valid = diag.min_excess >= -options.validity_tolerance && diag.margin_low > 0.0 && diag.margin_high > 0.0;
    if (!st.valid && options.strict_validity) {
      throw ValidityHalt("Stefan state invalid at t = " + std::to_string(t) + " (min excess " +
                         std::to_string(diag.min_excess) + " at node " + std::to_string(diag.argmin) + ")");
    }
    out.push_back(std::move(st));
  };

  double t = 0.0;
  record(t);
  std::size_t step = 0;
  while (t < t_end) {
    const double s = y[n];
    double h = numerics::diffusion_step_bound(dxi, params.alpha() / (s * s), options.safety);
    bool last = false;
    if (t + h >= t_end) {
      h = t_end - t;
      last = true;
    }
    if (h < 1e-14 * std::max(1.0, t_end)) {
      if (last) break;
      throw NumericalFailure("Stefan step size underflow at t = " + std::to_string(t));
    }
    stepper.step(rhs, t, y, h);
    y[n - 1] = params.t_melt;
    t = last ? t_end : t + h;
    ++step;
    if (!(y[n] > s_min) || !(y[n] < params.domain_length)) {
      record(t);
      throw ValidityHalt("interface left (0, L) at t = " + std::to_string(t) + ", s = " + std::to_string(y[n]));
    }
    if (last || step % options.output_stride == 0) record(t);
  }
  return out;
}

double stored_energy(const StefanState& state, const StefanParams& params) {
  std::vector<double> excess(state.theta.size());
  for (std::size_t i = 0; i < excess.size(); ++i) excess[i] = state.theta[i] - params.t_melt;
  const double dxi = 1.0 / static_cast<double>(excess.size() - 1);
  return numerics::integrate_trapezoid(excess, dxi) * state.s / params.alpha() + state.s / params.beta();
}

std::vector<double> energy_balance(const std::vector<StefanState>& trajectory, const HeatInput& input,
                                   const StefanParams& params) {
  std::vector<double> residual;
  if (trajectory.empty()) return residual;
  const double e0 = stored_energy(trajectory.front(), params);
  const double t0 = trajectory.front().time;
  residual.reserve(trajectory.size());
  for (const auto& st : trajectory) {
    residual.push_back(stored_energy(st, params) - e0 - input.integral(t0, st.time) / params.k);
  }
  return residual;
}

}  // namespace phasest::stefan
