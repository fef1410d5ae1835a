#include "phasest/battery.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

#include "json.hpp"

namespace phasest::battery {

namespace {

double cube(double x) { return x * x * x; }

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string("cell parameter ") + name + " must be positive");
}

const ElectrodeParams& electrode(const CellParams& p, Electrode e) { return e == Electrode::Negative ? p.neg : p.pos; }

// Finite-volume shell update. surface_flux is D c_r at R, interface_extra
// enters (c_beta - c_alpha) dr/dt = interface_extra - D c_r(r_p).
struct ShellFv {
  std::vector<double> dm;  // d/dt of cell contents V_i c_i
  std::vector<double> volume;
  std::vector<double> dvolume;
  double rdot = 0.0;
  double h = 0.0;
};

ShellFv shell_fv(double r_p, const std::vector<double>& c, double surface_flux, double interface_extra,
                 const CellParams& p) {
  const std::size_t n = c.size();
  const double R = p.pos.R_p, D = p.pos.D_s;
  ShellFv out;
  out.h = (R - r_p) / static_cast<double>(n);
  const double h = out.h;
  const double g = (9.0 * c[0] - c[1] - 8.0 * p.c_beta) / (3.0 * h);
  out.rdot = (interface_extra - D * g) / (p.c_beta - p.c_alpha);

  std::vector<double> flux(n + 1), face_speed(n + 1), face_r(n + 1);
  for (std::size_t f = 0; f <= n; ++f) {
    face_r[f] = r_p + static_cast<double>(f) * h;
    face_speed[f] = (1.0 - static_cast<double>(f) / static_cast<double>(n)) * out.rdot;
  }
  flux[0] = r_p * r_p * (D * g + p.c_beta * out.rdot);
  flux[n] = R * R * surface_flux;
  for (std::size_t f = 1; f < n; ++f) {
    const double grad = (c[f] - c[f - 1]) / h;
    flux[f] = face_r[f] * face_r[f] * (D * grad + 0.5 * (c[f - 1] + c[f]) * face_speed[f]);
  }
  out.dm.resize(n);
  out.volume.resize(n);
  out.dvolume.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.dm[i] = flux[i + 1] - flux[i];
    out.volume[i] = (cube(face_r[i + 1]) - cube(face_r[i])) / 3.0;
    out.dvolume[i] = face_r[i + 1] * face_r[i + 1] * face_speed[i + 1] - face_r[i] * face_r[i] * face_speed[i];
  }
  return out;
}

std::vector<double> shell_volumes(double r_p, std::size_t n, const CellParams& p) {
  const double h = (p.pos.R_p - r_p) / static_cast<double>(n);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = (cube(r_p + static_cast<double>(i + 1) * h) - cube(r_p + static_cast<double>(i) * h)) / 3.0;
  }
  return v;
}

std::vector<double> neg_volumes(std::size_t n, const CellParams& p) {
  const double h = p.neg.R_p / static_cast<double>(n);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (cube(static_cast<double>(i + 1) * h) - cube(static_cast<double>(i) * h)) / 3.0;
  return v;
}

std::vector<double> neg_fv(const std::vector<double>& c, double surface_flux, const CellParams& p) {
  const std::size_t n = c.size();
  const double R = p.neg.R_p, D = p.neg.D_s, h = R / static_cast<double>(n);
  std::vector<double> flux(n + 1, 0.0);
  for (std::size_t f = 1; f < n; ++f) {
    const double r = static_cast<double>(f) * h;
    flux[f] = r * r * D * (c[f] - c[f - 1]) / h;
  }
  flux[n] = R * R * surface_flux;
  std::vector<double> dm(n);
  for (std::size_t i = 0; i < n; ++i) dm[i] = flux[i + 1] - flux[i];
  return dm;
}

// Quadratic through the two outer cells with the given surface slope.
double extrapolate_surface(const std::vector<double>& c, double h, double slope) {
  const std::size_t n = c.size();
  return (9.0 * c[n - 1] - c[n - 2]) / 8.0 + 3.0 * h * slope / 8.0;
}

void check_shell(const ShellState& s, const CellParams& p) {
  if (s.c.size() < 3) throw InvalidArgument("shell needs at least 3 cells");
  if (!(s.r_p > 0.0 && s.r_p < p.pos.R_p)) throw ValidityHalt("interface left (0, R_p)");
  if (!numerics::all_finite(s.c)) throw NumericalFailure("non-finite shell concentration");
}

void check_neg(const NegParticleState& s) {
  if (s.c.size() < 3) throw InvalidArgument("negative particle needs at least 3 cells");
  if (!numerics::all_finite(s.c)) throw NumericalFailure("non-finite negative-particle concentration");
}

double shell_step_bound(double r_p, std::size_t n, const CellParams& p, double safety) {
  const double h = (p.pos.R_p - r_p) / static_cast<double>(n);
  return safety * h * h / (2.0 * p.pos.D_s);
}

double neg_step_bound(std::size_t n, const CellParams& p, double safety) {
  const double h = p.neg.R_p / static_cast<double>(n);
  return safety * h * h / (2.0 * p.neg.D_s);
}

// Piecewise-linear shell profile through (r_p, c_beta), the cell centres and
// (R, c_ss).
double shell_value_at(const ShellState& s, double c_ss, double r, const CellParams& p) {
  const std::size_t n = s.c.size();
  const double R = p.pos.R_p, h = (R - s.r_p) / static_cast<double>(n);
  if (r < s.r_p) return p.c_alpha;
  const double pos = (r - s.r_p) / h - 0.5;
  if (pos <= 0.0) {
    const double w = (r - s.r_p) / (0.5 * h);
    return p.c_beta + w * (s.c[0] - p.c_beta);
  }
  if (pos >= static_cast<double>(n - 1)) {
    const double w = std::min((r - (R - 0.5 * h)) / (0.5 * h), 1.0);
    return s.c[n - 1] + w * (c_ss - s.c[n - 1]);
  }
  const auto i = static_cast<std::size_t>(pos);
  const double w = pos - static_cast<double>(i);
  return s.c[i] + w * (s.c[i + 1] - s.c[i]);
}

double weighted_error(const ShellState& a, double a_ss, const ShellState& b, double b_ss, const CellParams& p) {
  const double R = p.pos.R_p;
  const double lo = std::max(a.r_p, b.r_p);
  const std::size_t m = 201;
  const double dr = (R - lo) / static_cast<double>(m - 1);
  std::vector<double> f(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double r = lo + static_cast<double>(k) * dr;
    const double e = shell_value_at(a, a_ss, r, p) - shell_value_at(b, b_ss, r, p);
    f[k] = r * r * e * e;
  }
  return numerics::integrate_trapezoid(f, dr);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double unit_open(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

}  // namespace

CellParams CellParams::lfp_reference() {
  CellParams p;
  p.neg = {50e-6, 27760.0, 11e-6, 9e-14, 0.33, 1e-5, 0.0, 3e-5};
  p.pos = {74e-6, 20950.0, 52e-9, 8e-18, 0.27, 0.0, 6.5e-3, 3e-17};
  p.c_alpha = 0.0480 * p.pos.c_max;
  p.c_beta = 0.8920 * p.pos.c_max;
  return p;
}

CellParams CellParams::load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open cell parameters " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("cell parameters " + path + ": " + e.what());
  }
  auto read_electrode = [&](const char* key) {
    if (!j.contains(key)) throw InvalidArgument(std::string("cell parameters: missing block ") + key);
    const auto& b = j.at(key);
    ElectrodeParams e;
    try {
      e.L = b.at("L").get<double>();
      e.c_max = b.at("c_s_max").get<double>();
      e.R_p = b.at("R_p").get<double>();
      e.D_s = b.at("D_s").get<double>();
      e.eps_s = b.at("eps_s").get<double>();
      e.R_f = b.at("R_f").get<double>();
      e.R_c = b.at("R_c").get<double>();
      e.k_rate = b.at("k").get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw InvalidArgument(std::string("cell parameters ") + key + ": " + ex.what());
    }
    return e;
  };
  CellParams p;
  p.neg = read_electrode("negative");
  p.pos = read_electrode("positive");
  try {
    const auto& pos = j.at("positive");
    p.c_alpha = pos.at("c_alpha_fraction").get<double>() * p.pos.c_max;
    p.c_beta = pos.at("c_beta_fraction").get<double>() * p.pos.c_max;
    p.F = j.at("F").get<double>();
    p.R_gas = j.at("R").get<double>();
    p.T = j.at("T").get<double>();
    p.c_e0 = j.at("c_e").get<double>();
    p.alpha_a = j.at("alpha_a").get<double>();
    p.alpha_c = j.at("alpha_c").get<double>();
  } catch (const nlohmann::json::exception& ex) {
    throw InvalidArgument(std::string("cell parameters: ") + ex.what());
  }
  p.validate();
  return p;
}

void CellParams::validate() const {
  for (const auto* e : {&neg, &pos}) {
    require_positive(e->L, "L");
    require_positive(e->c_max, "c_s_max");
    require_positive(e->R_p, "R_p");
    require_positive(e->D_s, "D_s");
    require_positive(e->eps_s, "eps_s");
    require_positive(e->k_rate, "k");
    if (e->R_f < 0.0 || e->R_c < 0.0) throw InvalidArgument("resistances must be nonnegative");
  }
  require_positive(c_e0, "c_e0");
  require_positive(alpha_a, "alpha_a");
  require_positive(alpha_c, "alpha_c");
  require_positive(F, "F");
  require_positive(R_gas, "R_gas");
  require_positive(T, "T");
  if (!(c_alpha > 0.0 && c_alpha < c_beta && c_beta <= pos.c_max)) {
    throw InvalidArgument("phase concentrations must satisfy 0 < c_alpha < c_beta <= c_max,+");
  }
}

double molar_flux(double current, Electrode e, const CellParams& p) {
  if (!std::isfinite(current)) throw InvalidArgument("molar_flux: current must be finite");
  const auto& el = electrode(p, e);
  const double magnitude = current / (el.a_s() * p.F * el.L);
  return e == Electrode::Positive ? magnitude : -magnitude;
}

NegParticleState uniform_negative(double c, std::size_t n, const CellParams& p) {
  if (n < 3) throw InvalidArgument("negative particle needs at least 3 cells");
  if (c < 0.0 || c > p.neg.c_max) throw InvalidArgument("negative concentration outside [0, c_max]");
  return {std::vector<double>(n, c), 0.0};
}

ShellState uniform_shell(double r_p, std::size_t n, const CellParams& p) {
  if (n < 3) throw InvalidArgument("shell needs at least 3 cells");
  if (!(r_p > 0.0 && r_p < p.pos.R_p)) throw InvalidArgument("interface must lie in (0, R_p,+)");
  return {r_p, std::vector<double>(n, p.c_beta), 0.0};
}

ShellRhs shell_rhs(const ShellState& s, double j_in, const CellParams& p) {
  check_shell(s, p);
  const auto fv = shell_fv(s.r_p, s.c, j_in, 0.0, p);
  ShellRhs out;
  out.dr_p = fv.rdot;
  out.dc.resize(s.c.size());
  for (std::size_t i = 0; i < s.c.size(); ++i) out.dc[i] = (fv.dm[i] - s.c[i] * fv.dvolume[i]) / fv.volume[i];
  return out;
}

std::vector<double> neg_rhs(const NegParticleState& s, double j_in, const CellParams& p) {
  check_neg(s);
  auto dm = neg_fv(s.c, j_in, p);
  const auto v = neg_volumes(s.c.size(), p);
  for (std::size_t i = 0; i < dm.size(); ++i) dm[i] /= v[i];
  return dm;
}

double shell_surface_concentration(const ShellState& s, double j_in, const CellParams& p) {
  check_shell(s, p);
  const double h = (p.pos.R_p - s.r_p) / static_cast<double>(s.c.size());
  return extrapolate_surface(s.c, h, j_in / p.pos.D_s);
}

double neg_surface_concentration(const NegParticleState& s, double j_in, const CellParams& p) {
  check_neg(s);
  const double h = p.neg.R_p / static_cast<double>(s.c.size());
  return extrapolate_surface(s.c, h, j_in / p.neg.D_s);
}

double shell_interface_gradient(const ShellState& s, const CellParams& p) {
  check_shell(s, p);
  const double h = (p.pos.R_p - s.r_p) / static_cast<double>(s.c.size());
  return p.pos.D_s * (9.0 * s.c[0] - s.c[1] - 8.0 * p.c_beta) / (3.0 * h);
}

double neg_average(const NegParticleState& s, const CellParams& p) {
  check_neg(s);
  const auto v = neg_volumes(s.c.size(), p);
  double m = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) m += v[i] * s.c[i];
  return 3.0 * m / cube(p.neg.R_p);
}

double pos_average(const ShellState& s, const CellParams& p) {
  check_shell(s, p);
  const auto v = shell_volumes(s.r_p, s.c.size(), p);
  double m = p.c_alpha * cube(s.r_p) / 3.0;
  for (std::size_t i = 0; i < v.size(); ++i) m += v[i] * s.c[i];
  return 3.0 * m / cube(p.pos.R_p);
}

double total_lithium(const NegParticleState& neg, const ShellState& shell, const CellParams& p) {
  return p.neg.eps_s * p.neg.L * neg_average(neg, p) + p.pos.eps_s * p.pos.L * pos_average(shell, p);
}

double exchange_current(double c_ss, Electrode e, const CellParams& p) {
  const auto& el = electrode(p, e);
  if (!(c_ss > 0.0 && c_ss < el.c_max)) throw InvalidArgument("surface concentration outside (0, c_max)");
  return p.F * el.k_rate * std::pow(c_ss, p.alpha_c) * std::pow(p.c_e0 * (el.c_max - c_ss), p.alpha_a);
}

double butler_volmer(double j_rxn, double c_ss, Electrode e, const CellParams& p) {
  const double i0 = exchange_current(c_ss, e, p);
  const double f = p.F / (p.R_gas * p.T);
  if (p.alpha_a == 0.5 && p.alpha_c == 0.5) return 2.0 / f * std::asinh(p.F * j_rxn / (2.0 * i0));
  // i0/F (exp(aa f eta) - exp(-ac f eta)) = j_rxn is monotone in eta
  const double target = p.F * j_rxn / i0;
  auto g = [&](double eta) { return std::exp(p.alpha_a * f * eta) - std::exp(-p.alpha_c * f * eta) - target; };
  auto dg = [&](double eta) {
    return f * (p.alpha_a * std::exp(p.alpha_a * f * eta) + p.alpha_c * std::exp(-p.alpha_c * f * eta));
  };
  double eta = std::asinh(0.5 * target) * 2.0 / (f * (p.alpha_a + p.alpha_c));
  for (int it = 0; it < 100; ++it) {
    const double step = g(eta) / dg(eta);
    eta -= step;
    if (std::abs(step) < 1e-14 * std::max(1.0, std::abs(eta))) return eta;
  }
  throw NumericalFailure("Butler-Volmer Newton iteration did not converge");
}

OcpCurve::OcpCurve(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  if (n < 2 || y_.size() != n) throw InvalidArgument("OCP table needs at least 2 matching points");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x_[i]) || !std::isfinite(y_[i])) throw InvalidArgument("OCP table has non-finite entries");
    if (i > 0 && !(x_[i] > x_[i - 1])) throw InvalidArgument("OCP stoichiometry must increase strictly");
  }
  if (x_.front() < 0.0 || x_.back() > 1.0) throw InvalidArgument("OCP stoichiometry must lie in [0, 1]");
  // Fritsch-Carlson slopes
  std::vector<double> h(n - 1), d(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = x_[i + 1] - x_[i];
    d[i] = (y_[i + 1] - y_[i]) / h[i];
  }
  m_.assign(n, 0.0);
  m_[0] = d[0];
  m_[n - 1] = d[n - 2];
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (d[i - 1] * d[i] <= 0.0) continue;
    const double w1 = 2.0 * h[i] + h[i - 1], w2 = h[i] + 2.0 * h[i - 1];
    m_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
  }
}

OcpCurve OcpCurve::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open OCP table " + path);
  std::vector<double> x, y;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      if (line != "stoichiometry,U") throw InvalidArgument("OCP table " + path + ": expected header stoichiometry,U");
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw InvalidArgument("OCP table " + path + ": malformed row '" + line + "'");
    try {
      x.push_back(std::stod(line.substr(0, comma)));
      y.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::logic_error&) {
      throw InvalidArgument("OCP table " + path + ": bad number in '" + line + "'");
    }
  }
  return OcpCurve(std::move(x), std::move(y));
}

double OcpCurve::operator()(double s) const {
  if (x_.empty()) throw InvalidArgument("empty OCP curve");
  if (!(s >= x_.front() && s <= x_.back())) throw InvalidArgument("stoichiometry outside the OCP table");
  const auto it = std::upper_bound(x_.begin(), x_.end(), s);
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(it - x_.begin()), x_.size() - 1) - 1;
  const double h = x_[i + 1] - x_[i];
  const double t = (s - x_[i]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * y_[i] + (t3 - 2 * t2 + t) * h * m_[i] + (-2 * t3 + 3 * t2) * y_[i + 1] +
         (t3 - t2) * h * m_[i + 1];
}

OcpPair OcpPair::defaults() {
  const std::string dir = PHASEST_ASSET_DIR;
  return {OcpCurve::load_csv(dir + "/ocp_negative.csv"), OcpCurve::load_csv(dir + "/ocp_positive.csv")};
}

VoltageBreakdown terminal_voltage(const NegParticleState& neg, const ShellState& shell, double current,
                                  const OcpPair& ocp, const CellParams& p) {
  const double jn = molar_flux(current, Electrode::Negative, p);
  const double jp = molar_flux(current, Electrode::Positive, p);
  const double css_n = neg_surface_concentration(neg, jn, p);
  const double css_p = shell_surface_concentration(shell, jp, p);
  VoltageBreakdown v;
  v.eta_neg = butler_volmer(-jn, css_n, Electrode::Negative, p);
  v.eta_pos = butler_volmer(-jp, css_p, Electrode::Positive, p);
  v.u_neg = ocp.neg(css_n / p.neg.c_max);
  v.u_pos = ocp.pos(css_p / p.pos.c_max);
  const double phi_n = v.eta_neg + v.u_neg + p.neg.R_f * p.F * (-jn);
  const double phi_p = v.eta_pos + v.u_pos + p.pos.R_f * p.F * (-jp);
  v.voltage = phi_p - phi_n;
  if (p.contact_resistance) v.voltage -= current * (p.neg.R_c + p.pos.R_c);
  return v;
}

double soc(double c_avg, double c_max) {
  if (!(c_max > 0.0)) throw InvalidArgument("soc: c_max must be positive");
  return c_avg / c_max;
}

double soc(double c_avg, double c_lo, double c_hi) {
  if (!(c_hi > c_lo)) throw InvalidArgument("soc: window must satisfy c_lo < c_hi");
  return (c_avg - c_lo) / (c_hi - c_lo);
}

void BatteryObserverParams::validate() const {
  if (!(lambda > 0.0) || !(kappa > 0.0)) throw InvalidArgument("battery observer needs lambda > 0 and kappa > 0");
  if (!(ekf_p0_conc > 0.0 && ekf_p0_radius > 0.0 && ekf_q_conc >= 0.0 && ekf_q_radius >= 0.0 && ekf_r_meas > 0.0)) {
    throw InvalidArgument("EKF covariances must be positive");
  }
}

double gain_P(double r, double r_hat, const BatteryObserverParams& o, const CellParams& p) {
  const double R = p.pos.R_p, D = p.pos.D_s;
  if (!(r_hat > 0.0 && r_hat < R)) throw InvalidArgument("gain_P: r_hat outside (0, R_p)");
  if (r < r_hat * (1.0 - 1e-12) || r > R * (1.0 + 1e-12)) throw InvalidArgument("gain_P: r outside the shell");
  const double s = R - r_hat, l = std::clamp(r - r_hat, 0.0, s);
  const double lam_bar = o.lambda / D;
  const double z = std::sqrt(std::max(lam_bar * (s * s - l * l), 0.0));
  return D * lam_bar * lam_bar * (R / r) * l * s * numerics::bessel_ratio_i(2, z);
}

double gain_Q(double r_hat, const BatteryObserverParams& o, const CellParams& p) {
  const double R = p.pos.R_p;
  if (!(r_hat > 0.0 && r_hat < R * (1.0 + 1e-12))) throw InvalidArgument("gain_Q: r_hat outside (0, R_p]");
  return p.pos.D_s / R + 0.5 * o.lambda * (R - r_hat);
}

PositiveGains observer_gains_pos(double r_hat, std::size_t n, const BatteryObserverParams& o, const CellParams& p) {
  if (n < 3) throw InvalidArgument("observer shell needs at least 3 cells");
  PositiveGains g;
  g.Q = gain_Q(r_hat, o, p);
  g.P.resize(n);
  const double h = (p.pos.R_p - r_hat) / static_cast<double>(n);
  const auto v = shell_volumes(r_hat, n, p);
  for (std::size_t i = 0; i < n; ++i) {
    g.P[i] = gain_P(r_hat + (static_cast<double>(i) + 0.5) * h, r_hat, o, p);
    g.P_integral += g.P[i] * v[i];
  }
  return g;
}

NegativeGains observer_gains_neg(double r_hat, const PositiveGains& pos, const BatteryObserverParams& o,
                                 const CellParams& p) {
  const double R = p.pos.R_p;
  NegativeGains g;
  g.Q_minus = -(p.pos.a_s() * p.pos.L) / (p.neg.a_s() * p.neg.L) * (pos.Q + o.kappa * r_hat * r_hat / (R * R));
  g.P_minus = -(p.pos.eps_s * p.pos.L) / (p.neg.eps_s * p.neg.L) * 3.0 / cube(R) * pos.P_integral;
  return g;
}

ObserverRhsPos observer_rhs_pos(const ShellState& s, double c_ss_meas, double j_in, const BatteryObserverParams& o,
                                const CellParams& p) {
  check_shell(s, p);
  if (!std::isfinite(c_ss_meas)) throw InvalidArgument("non-finite surface measurement");
  const std::size_t n = s.c.size();
  const auto g = observer_gains_pos(s.r_p, n, o, p);
  const double D = p.pos.D_s;
  const double h = (p.pos.R_p - s.r_p) / static_cast<double>(n);
  // the surface value depends on the injected flux, solve the linear relation
  const double a = (9.0 * s.c[n - 1] - s.c[n - 2]) / 8.0;
  const double k = 3.0 * h / (8.0 * D);
  ObserverRhsPos out;
  out.c_ss_hat = (a + k * (j_in + g.Q * c_ss_meas)) / (1.0 + k * g.Q);
  out.innovation = c_ss_meas - out.c_ss_hat;
  const auto fv = shell_fv(s.r_p, s.c, j_in + g.Q * out.innovation, -o.kappa * out.innovation, p);
  out.dr_hat = fv.rdot;
  out.dc.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double dm = fv.dm[i] + g.P[i] * out.innovation * fv.volume[i];
    out.dc[i] = (dm - s.c[i] * fv.dvolume[i]) / fv.volume[i];
  }
  return out;
}

std::vector<double> observer_rhs_neg(const NegParticleState& s, double innovation, double j_in,
                                     const NegativeGains& g, const CellParams& p) {
  check_neg(s);
  auto dm = neg_fv(s.c, j_in + g.Q_minus * innovation, p);
  const auto v = neg_volumes(s.c.size(), p);
  for (std::size_t i = 0; i < dm.size(); ++i) dm[i] = dm[i] / v[i] + g.P_minus * innovation;
  return dm;
}

double gaussian_noise(std::uint64_t seed, std::uint64_t k) {
  const std::uint64_t base = splitmix64(seed ^ splitmix64(k));
  const double u1 = unit_open(splitmix64(base));
  const double u2 = unit_open(splitmix64(base + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

BatteryInitial initial_states(const BatteryScenario& sc) {
  const auto& p = sc.params;
  p.validate();
  if (!(sc.rp0_fraction > 0.0 && sc.rp0_fraction < 1.0)) throw InvalidArgument("rp0_fraction must lie in (0, 1)");
  if (!(sc.soc0 > 0.0 && sc.soc0 < 1.0 && sc.soc_hat0 > 0.0 && sc.soc_hat0 < 1.0)) {
    throw InvalidArgument("initial SoC values must lie in (0, 1)");
  }
  BatteryInitial init;
  init.neg = uniform_negative(sc.soc0 * p.neg.c_max, sc.n_neg, p);
  init.shell = uniform_shell(sc.rp0_fraction * p.pos.R_p, sc.n_shell, p);
  init.neg_hat = uniform_negative(sc.soc_hat0 * p.neg.c_max, sc.n_neg, p);
  // same total lithium: the SoC offset moves into the positive estimate
  const double n_li = total_lithium(init.neg, init.shell, p);
  const double pos_hat_avg = (n_li - p.neg.eps_s * p.neg.L * sc.soc_hat0 * p.neg.c_max) / (p.pos.eps_s * p.pos.L);
  const double rho3 = (p.c_beta - pos_hat_avg) / (p.c_beta - p.c_alpha);
  if (!(rho3 > cube(kInterfaceGuard) && rho3 < cube(1.0 - kInterfaceGuard))) {
    throw InvalidArgument("initial SoC estimate is not reachable by a core-shell positive particle");
  }
  init.shell_hat = uniform_shell(std::cbrt(rho3) * p.pos.R_p, sc.n_shell, p);
  return init;
}

namespace {

// Packed plant or observer: [shell contents (n), r_p^3, negative contents (m)].
struct Packing {
  std::size_t ns;
  std::size_t nn;
  std::size_t size() const { return ns + 1 + nn; }
};

void pack_into(const ShellState& s, const NegParticleState& n, const CellParams& p, double* y) {
  const auto vs = shell_volumes(s.r_p, s.c.size(), p);
  for (std::size_t i = 0; i < s.c.size(); ++i) y[i] = vs[i] * s.c[i];
  y[s.c.size()] = cube(s.r_p);
  const auto vn = neg_volumes(n.c.size(), p);
  for (std::size_t i = 0; i < n.c.size(); ++i) y[s.c.size() + 1 + i] = vn[i] * n.c[i];
}

void unpack_from(const double* y, const Packing& k, const std::vector<double>& vn, const CellParams& p,
                 ShellState& s, NegParticleState& n) {
  s.r_p = std::cbrt(y[k.ns]);
  if (!(s.r_p > 0.0 && s.r_p < p.pos.R_p)) throw ValidityHalt("interface left the particle");
  const auto vs = shell_volumes(s.r_p, k.ns, p);
  s.c.resize(k.ns);
  for (std::size_t i = 0; i < k.ns; ++i) s.c[i] = y[i] / vs[i];
  n.c.resize(k.nn);
  for (std::size_t i = 0; i < k.nn; ++i) n.c[i] = y[k.ns + 1 + i] / vn[i];
}

/// Discrete EKF on a coarse shell with the interface radius in the state.
class ShellEkf {
 public:
  ShellEkf(const ShellState& init, const BatteryObserverParams& o, const CellParams& p, double safety)
      : p_(p), safety_(safety), n_(init.c.size()) {
    x_.resize(static_cast<Eigen::Index>(n_ + 1));
    for (std::size_t i = 0; i < n_; ++i) x_[static_cast<Eigen::Index>(i)] = init.c[i];
    x_[static_cast<Eigen::Index>(n_)] = init.r_p;
    scale_ = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_ + 1), p.pos.c_max);
    scale_[static_cast<Eigen::Index>(n_)] = p.pos.R_p;
    const Eigen::Index dim = static_cast<Eigen::Index>(n_ + 1);
    P_ = Eigen::MatrixXd::Zero(dim, dim);
    q_ = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      const bool radius = i == dim - 1;
      const double sd0 = (radius ? o.ekf_p0_radius : o.ekf_p0_conc) * scale_[i];
      const double qd = (radius ? o.ekf_q_radius : o.ekf_q_conc) * scale_[i];
      P_(i, i) = sd0 * sd0;
      q_[i] = qd * qd;
    }
    r_ = o.ekf_r_meas * p.pos.c_max;
    r_ = r_ * r_;
  }

  void predict(double dt, double j_in) {
    const Eigen::Index dim = x_.size();
    const Eigen::VectorXd fx = propagate(x_, dt, j_in);
    Eigen::MatrixXd F(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Eigen::VectorXd xp = x_;
      const double d = 1e-6 * scale_[i];
      xp[i] += d;
      F.col(i) = (propagate(xp, dt, j_in) - fx) / d;
    }
    x_ = fx;
    P_ = F * P_ * F.transpose();
    P_.diagonal() += q_ * dt;
    P_ = 0.5 * (P_ + P_.transpose());
  }

  void update(double y, double j_in) {
    const Eigen::Index dim = x_.size();
    const double hx = measure(x_, j_in);
    Eigen::RowVectorXd H(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      Eigen::VectorXd xp = x_;
      const double d = 1e-6 * scale_[i];
      xp[i] += d;
      H[i] = (measure(xp, j_in) - hx) / d;
    }
    const double S = (H * P_ * H.transpose())(0, 0) + r_;
    if (!(S > 0.0) || !std::isfinite(S)) throw NumericalFailure("EKF innovation covariance is not positive");
    const Eigen::VectorXd K = P_ * H.transpose() / S;
    x_ += K * (y - hx);
    const Eigen::MatrixXd I_KH = Eigen::MatrixXd::Identity(dim, dim) - K * H;
    P_ = I_KH * P_ * I_KH.transpose() + K * r_ * K.transpose();
    P_ = 0.5 * (P_ + P_.transpose());
    if (P_.llt().info() != Eigen::Success) throw NumericalFailure("EKF covariance lost positive definiteness");
    clamp(x_);
  }

  ShellState state() const {
    ShellState s;
    s.r_p = x_[static_cast<Eigen::Index>(n_)];
    s.c.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) s.c[i] = x_[static_cast<Eigen::Index>(i)];
    return s;
  }

 private:
  void clamp(Eigen::VectorXd& x) const {
    const double R = p_.pos.R_p;
    auto& r = x[static_cast<Eigen::Index>(n_)];
    r = std::clamp(r, kInterfaceGuard * R, (1.0 - kInterfaceGuard) * R);
  }

  Eigen::VectorXd propagate(Eigen::VectorXd x, double dt, double j_in) const {
    clamp(x);
    const std::size_t dim = n_ + 1;
    std::vector<double> y(x.data(), x.data() + dim);
    ShellState s;
    s.c.resize(n_);
    auto rhs = [&](double, const std::vector<double>& yy, std::vector<double>& dy) {
      s.r_p = std::clamp(yy[n_], kInterfaceGuard * p_.pos.R_p, (1.0 - kInterfaceGuard) * p_.pos.R_p);
      std::copy(yy.begin(), yy.begin() + static_cast<std::ptrdiff_t>(n_), s.c.begin());
      const auto fv = shell_fv(s.r_p, s.c, j_in, 0.0, p_);
      for (std::size_t i = 0; i < n_; ++i) dy[i] = (fv.dm[i] - s.c[i] * fv.dvolume[i]) / fv.volume[i];
      dy[n_] = fv.rdot;
    };
    numerics::Rk4Stepper stepper(dim);
    double t = 0.0;
    while (t < dt - 1e-12 * dt) {
      const double r = std::clamp(y[n_], kInterfaceGuard * p_.pos.R_p, (1.0 - kInterfaceGuard) * p_.pos.R_p);
      double h = std::min(shell_step_bound(r, n_, p_, safety_), dt - t);
      stepper.step(rhs, t, y, h);
      t += h;
    }
    Eigen::VectorXd out = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(dim));
    clamp(out);
    return out;
  }

  double measure(const Eigen::VectorXd& x, double j_in) const {
    const double r = x[static_cast<Eigen::Index>(n_)];
    const double h = (p_.pos.R_p - r) / static_cast<double>(n_);
    return (9.0 * x[static_cast<Eigen::Index>(n_ - 1)] - x[static_cast<Eigen::Index>(n_ - 2)]) / 8.0 +
           3.0 * h * j_in / (8.0 * p_.pos.D_s);
  }

  const CellParams& p_;
  double safety_;
  std::size_t n_;
  Eigen::VectorXd x_;
  Eigen::VectorXd scale_;
  Eigen::MatrixXd P_;
  Eigen::VectorXd q_;
  double r_ = 0.0;
};

ShellState coarsen(const ShellState& s, std::size_t n, const CellParams& p) {
  ShellState out;
  out.r_p = s.r_p;
  out.c.resize(n);
  const double c_ss = shell_surface_concentration(s, 0.0, p);
  const double h = (p.pos.R_p - s.r_p) / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out.c[i] = shell_value_at(s, c_ss, s.r_p + (static_cast<double>(i) + 0.5) * h, p);
  return out;
}

BatteryRun simulate(const BatteryScenario& sc, bool with_observer) {
  const auto& p = sc.params;
  p.validate();
  if (with_observer) sc.observer.validate();
  if (!(sc.t_end > 0.0 && sc.output_dt > 0.0 && sc.meas_dt > 0.0)) throw InvalidArgument("battery horizons must be positive");
  if (sc.noise_std < 0.0) throw InvalidArgument("noise_std must be nonnegative");
  const double current = sc.c_rate * p.one_c_current();
  const double jp = molar_flux(current, Electrode::Positive, p);
  const double jn = molar_flux(current, Electrode::Negative, p);
  auto init = initial_states(sc);
  if (sc.pin_interface) init.shell_hat.r_p = init.shell.r_p;
  if (sc.pin_interface && init.shell_hat.c.size() == init.shell.c.size()) {
    // pinned runs need a profile error; ramp from the interface outward
    for (std::size_t i = 0; i < init.shell_hat.c.size(); ++i) {
      init.shell_hat.c[i] += 0.05 * p.pos.c_max * (static_cast<double>(i) + 0.5) / static_cast<double>(init.shell_hat.c.size());
    }
    init.neg_hat = init.neg;
  }

  const Packing k{sc.n_shell, sc.n_neg};
  const std::size_t off = k.size();
  std::vector<double> y(with_observer ? 2 * off : off);
  pack_into(init.shell, init.neg, p, y.data());
  if (with_observer) pack_into(init.shell_hat, init.neg_hat, p, y.data() + off);
  const auto vn = neg_volumes(sc.n_neg, p);

  const OcpPair ocp = OcpPair::defaults();
  ShellState shell, shell_hat;
  NegParticleState neg, neg_hat;
  double noise_now = 0.0;
  ObserverRhsPos last_obs;

  auto rhs = [&](double, const std::vector<double>& yy, std::vector<double>& dy) {
    unpack_from(yy.data(), k, vn, p, shell, neg);
    const auto fv = shell_fv(shell.r_p, shell.c, jp, 0.0, p);
    for (std::size_t i = 0; i < k.ns; ++i) dy[i] = fv.dm[i];
    dy[k.ns] = 3.0 * shell.r_p * shell.r_p * fv.rdot;
    const auto dmn = neg_fv(neg.c, jn, p);
    for (std::size_t i = 0; i < k.nn; ++i) dy[k.ns + 1 + i] = dmn[i];
    if (!with_observer) return;

    unpack_from(yy.data() + off, k, vn, p, shell_hat, neg_hat);
    if (sc.pin_interface) shell_hat.r_p = shell.r_p;
    const double meas = extrapolate_surface(shell.c, (p.pos.R_p - shell.r_p) / static_cast<double>(k.ns), jp / p.pos.D_s) + noise_now;
    const auto g = observer_gains_pos(shell_hat.r_p, k.ns, sc.observer, p);
    const double D = p.pos.D_s;
    const double h = (p.pos.R_p - shell_hat.r_p) / static_cast<double>(k.ns);
    const double a = (9.0 * shell_hat.c[k.ns - 1] - shell_hat.c[k.ns - 2]) / 8.0;
    const double kk = 3.0 * h / (8.0 * D);
    const double c_ss_hat = (a + kk * (jp + g.Q * meas)) / (1.0 + kk * g.Q);
    const double innov = meas - c_ss_hat;
    const auto fo = shell_fv(shell_hat.r_p, shell_hat.c, jp + g.Q * innov, -sc.observer.kappa * innov, p);
    for (std::size_t i = 0; i < k.ns; ++i) dy[off + i] = fo.dm[i] + g.P[i] * innov * fo.volume[i];
    dy[off + k.ns] = sc.pin_interface ? dy[k.ns] : 3.0 * shell_hat.r_p * shell_hat.r_p * fo.rdot;
    const auto gn = observer_gains_neg(shell_hat.r_p, g, sc.observer, p);
    const auto dmo = neg_fv(neg_hat.c, jn + gn.Q_minus * innov, p);
    for (std::size_t i = 0; i < k.nn; ++i) dy[off + k.ns + 1 + i] = dmo[i] + gn.P_minus * innov * vn[i];
    last_obs.c_ss_hat = c_ss_hat;
    last_obs.innovation = innov;
  };

  std::unique_ptr<ShellEkf> ekf;
  const bool use_ekf = with_observer && sc.run_ekf;
  if (use_ekf) {
    ekf = std::make_unique<ShellEkf>(coarsen(init.shell_hat, sc.n_ekf, p), sc.observer, p, sc.safety);
  }
  const double n_hat0 = with_observer ? total_lithium(init.neg_hat, init.shell_hat, p) : 0.0;

  BatteryRun run;
  auto sample_noise = [&](std::uint64_t idx) { return sc.noise_std > 0.0 ? sc.noise_std * gaussian_noise(sc.seed, idx) : 0.0; };

  auto record = [&](double t) {
    unpack_from(y.data(), k, vn, p, shell, neg);
    BatterySample s;
    s.time = t;
    s.r_p = shell.r_p;
    s.c_ss_true = shell_surface_concentration(shell, jp, p);
    s.c_ss_meas = s.c_ss_true + noise_now;
    s.soc_true = soc(neg_average(neg, p), p.neg.c_max);
    s.pos_avg_true = pos_average(shell, p) / p.pos.c_max;
    s.n_li_plant = total_lithium(neg, shell, p);
    try {
      s.voltage = terminal_voltage(neg, shell, current, ocp, p).voltage;
    } catch (const InvalidArgument&) {
      s.voltage = std::numeric_limits<double>::quiet_NaN();
    }
    if (with_observer) {
      unpack_from(y.data() + off, k, vn, p, shell_hat, neg_hat);
      if (sc.pin_interface) shell_hat.r_p = shell.r_p;
      s.r_hat = shell_hat.r_p;
      s.soc_bks = soc(neg_average(neg_hat, p), p.neg.c_max);
      s.pos_avg_bks = pos_average(shell_hat, p) / p.pos.c_max;
      s.n_li_observer = total_lithium(neg_hat, shell_hat, p);
      const auto o = observer_rhs_pos(shell_hat, s.c_ss_meas, jp, sc.observer, p);
      s.c_ss_bks = o.c_ss_hat;
      s.weighted_error = weighted_error(shell, s.c_ss_true, shell_hat, o.c_ss_hat, p);
    } else {
      s.r_hat = s.r_p;
      s.soc_bks = s.soc_true;
      s.pos_avg_bks = s.pos_avg_true;
      s.n_li_observer = s.n_li_plant;
      s.c_ss_bks = s.c_ss_true;
    }
    s.r_ekf = std::numeric_limits<double>::quiet_NaN();
    s.soc_ekf = std::numeric_limits<double>::quiet_NaN();
    if (ekf) {
      const auto es = ekf->state();
      s.r_ekf = es.r_p;
      const double pos_avg = pos_average(es, p);
      s.soc_ekf = soc((n_hat0 - p.pos.eps_s * p.pos.L * pos_avg) / (p.neg.eps_s * p.neg.L), p.neg.c_max);
    }
    run.samples.push_back(s);
  };

  numerics::Rk4Stepper stepper(y.size());
  double t = 0.0;
  std::uint64_t meas_index = 0;
  noise_now = sample_noise(0);
  double next_out = sc.output_dt;
  double next_meas = sc.meas_dt;
  try {
    if (ekf) {
      unpack_from(y.data(), k, vn, p, shell, neg);
      ekf->update(shell_surface_concentration(shell, jp, p) + noise_now, jp);
    }
    record(0.0);
    while (t < sc.t_end - 1e-9) {
      unpack_from(y.data(), k, vn, p, shell, neg);
      double h = std::min(shell_step_bound(shell.r_p, k.ns, p, sc.safety), neg_step_bound(k.nn, p, sc.safety));
      if (with_observer) {
        unpack_from(y.data() + off, k, vn, p, shell_hat, neg_hat);
        h = std::min(h, shell_step_bound(shell_hat.r_p, k.ns, p, sc.safety));
      }
      const double target = std::min({next_out, next_meas, sc.t_end});
      bool hit = false;
      if (t + h >= target - 1e-12) {
        h = target - t;
        hit = true;
      }
      stepper.step(rhs, t, y, h);
      t = hit ? target : t + h;
      if (!numerics::all_finite(y)) throw NumericalFailure("non-finite battery state");
      unpack_from(y.data(), k, vn, p, shell, neg);
      if (shell.r_p < kInterfaceGuard * p.pos.R_p) throw ValidityHalt("interface reached the particle centre");
      if (shell_surface_concentration(shell, jp, p) >= p.pos.c_max) throw ValidityHalt("positive surface saturated");
      if (with_observer && !sc.pin_interface) {
        const double R = p.pos.R_p;
        double& u = y[off + k.ns];
        u = std::clamp(u, cube(kInterfaceGuard * R), cube((1.0 - kInterfaceGuard) * R));
      }
      if (std::abs(t - next_meas) < 1e-9) {
        ++meas_index;
        noise_now = sample_noise(meas_index);
        if (ekf) {
          ekf->predict(sc.meas_dt, jp);
          ekf->update(shell_surface_concentration(shell, jp, p) + noise_now, jp);
        }
        next_meas = static_cast<double>(meas_index + 1) * sc.meas_dt;
      }
      if (std::abs(t - next_out) < 1e-9 || t >= sc.t_end - 1e-9) {
        record(t);
        if (std::abs(t - next_out) < 1e-9) next_out += sc.output_dt;
      }
    }
  } catch (const ValidityHalt& e) {
    run.halted = true;
    run.halt_reason = e.what();
  } catch (const NumericalFailure& e) {
    run.halted = true;
    run.numerical_failure = true;
    run.halt_reason = e.what();
  }
  return run;
}

}  // namespace

BatteryRun run_discharge(const BatteryScenario& scenario) { return simulate(scenario, false); }

BatteryRun run_estimation(const BatteryScenario& scenario) { return simulate(scenario, true); }

}  // namespace phasest::battery
