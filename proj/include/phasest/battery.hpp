#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "phasest/numerics.hpp"

namespace phasest::battery {

struct ElectrodeParams {
  double L = 0.0;       // m, electrode thickness
  double c_max = 0.0;   // mol/m^3
  double R_p = 0.0;     // m, particle radius
  double D_s = 0.0;     // m^2/s
  double eps_s = 0.0;   // active volume fraction
  double R_f = 0.0;     // Ohm m^2, film resistance
  double R_c = 0.0;     // Ohm m^2, contact resistance
  double k_rate = 0.0;  // m^2.5 / (mol^0.5 s)

  double a_s() const { return 3.0 * eps_s / R_p; }
};

struct CellParams {
  ElectrodeParams neg;
  ElectrodeParams pos;
  double c_alpha = 0.0;  // mol/m^3, lithium-poor core phase
  double c_beta = 0.0;   // mol/m^3, lithium-rich shell phase
  double c_e0 = 1e3;     // mol/m^3
  double alpha_a = 0.5;
  double alpha_c = 0.5;
  double F = 96487.0;    // As/mol
  double R_gas = 8.314472;
  double T = 298.0;      // K
  bool contact_resistance = false;  // subtract I * (R_c,- + R_c,+) from V

  // LFP parameter table.
  static CellParams lfp_reference();
  // JSON with "negative"/"positive" blocks; see assets/battery_params.json.
  static CellParams load_json(const std::string& path);

  // Current density that fills the positive electrode from empty in one hour.
  double one_c_current() const { return pos.eps_s * pos.L * pos.c_max * F / 3600.0; }

  void validate() const;
};

enum class Electrode { Negative, Positive };

// Lithium flux into the particle surface, mol/m^2/s. Discharge (I > 0)
// inserts into the positive particle and extracts from the negative one.
double molar_flux(double current, Electrode electrode, const CellParams& params);

/// Finite-volume concentration on uniform cells over [0, R_p,-]. c holds cell
/// values; cell i spans [i h, (i+1) h].
struct NegParticleState {
  std::vector<double> c;
  double time = 0.0;
};

/// beta-phase shell on uniform cells over [r_p, R_p,+]. The inner face sits
/// at c_beta; the core r < r_p holds c_alpha.
struct ShellState {
  double r_p = 0.0;
  std::vector<double> c;
  double time = 0.0;
};

NegParticleState uniform_negative(double c, std::size_t n_cells, const CellParams& params);
ShellState uniform_shell(double r_p, std::size_t n_cells, const CellParams& params);

struct ShellRhs {
  std::vector<double> dc;  // following the moving cell centres
  double dr_p = 0.0;
};

// Spherical diffusion in the shell with D c_r(R) = j_in and
// (c_beta - c_alpha) dr_p/dt = -D c_r(r_p).
ShellRhs shell_rhs(const ShellState& state, double j_in, const CellParams& params);

// Spherical diffusion in the negative particle with D c_r(R) = j_in.
std::vector<double> neg_rhs(const NegParticleState& state, double j_in, const CellParams& params);

// Second-order surface values using the imposed surface gradient j_in / D.
double shell_surface_concentration(const ShellState& state, double j_in, const CellParams& params);
double neg_surface_concentration(const NegParticleState& state, double j_in, const CellParams& params);

// D dc/dr at the shell's inner face.
double shell_interface_gradient(const ShellState& state, const CellParams& params);

// Volume averages over the whole particle; the positive one includes the core.
double neg_average(const NegParticleState& state, const CellParams& params);
double pos_average(const ShellState& state, const CellParams& params);

// eps L weighted averages summed over both electrodes, mol/m^2.
double total_lithium(const NegParticleState& neg, const ShellState& shell, const CellParams& params);

// i0 = F k c_ss^alpha_c (c_e0 (c_max - c_ss))^alpha_a. Throws outside (0, c_max).
double exchange_current(double c_ss, Electrode electrode, const CellParams& params);

// Overpotential for the reaction flux j_rxn (deintercalation positive, so
// j_rxn = -j_in). Closed form asinh for symmetric transfer coefficients,
// Newton otherwise.
double butler_volmer(double j_rxn, double c_ss, Electrode electrode, const CellParams& params);

/// Open-circuit potential against stoichiometry, monotone cubic (PCHIP).
class OcpCurve {
 public:
  OcpCurve() = default;
  OcpCurve(std::vector<double> stoich, std::vector<double> volts);
  // CSV with header stoichiometry,U.
  static OcpCurve load_csv(const std::string& path);

  double operator()(double stoich) const;
  const std::vector<double>& stoichiometry() const { return x_; }

 private:
  std::vector<double> x_, y_, m_;
};

struct OcpPair {
  OcpCurve neg;
  OcpCurve pos;
  // Synthetic graphite / LFP-like curves from the asset directory.
  static OcpPair defaults();
};

struct VoltageBreakdown {
  double voltage = 0.0;
  double eta_neg = 0.0;
  double eta_pos = 0.0;
  double u_neg = 0.0;
  double u_pos = 0.0;
};

VoltageBreakdown terminal_voltage(const NegParticleState& neg, const ShellState& shell, double current,
                                  const OcpPair& ocp, const CellParams& params);

// c_avg / c_max, or the stoichiometry window (c_avg - lo)/(hi - lo).
double soc(double c_avg, double c_max);
double soc(double c_avg, double c_lo, double c_hi);

struct BatteryObserverParams {
  double lambda = 0.05;  // 1/s
  double kappa = 2e-8;   // m/s, interface injection
  // EKF tuning: standard deviations in state units. The defaults lean
  // toward noise attenuation; a wide prior makes the EKF converge faster.
  double ekf_p0_conc = 0.02;     // fraction of c_max,+
  double ekf_p0_radius = 0.02;   // fraction of R_p,+
  double ekf_q_conc = 1e-6;      // fraction of c_max,+ per sqrt(s)
  double ekf_q_radius = 1e-6;    // fraction of R_p,+ per sqrt(s)
  double ekf_r_meas = 0.01;      // fraction of c_max,+

  double lambda_bar(const CellParams& params) const { return lambda / params.pos.D_s; }
  void validate() const;
};

struct PositiveGains {
  std::vector<double> P;  // at the observer's cell centres
  double Q = 0.0;
  double P_integral = 0.0;  // sum over cells of P r^2 dr
};

// P(r) = (lambda^2 / D) (R / r) l s I2(z)/z^2 with s = R - r_hat, l = r - r_hat,
// z^2 = (lambda/D)(s^2 - l^2).
double gain_P(double r, double r_hat, const BatteryObserverParams& obs, const CellParams& params);
// Q = D / R + lambda s / 2.
double gain_Q(double r_hat, const BatteryObserverParams& obs, const CellParams& params);

PositiveGains observer_gains_pos(double r_hat, std::size_t n_cells, const BatteryObserverParams& obs,
                                 const CellParams& params);

struct NegativeGains {
  double P_minus = 0.0;
  double Q_minus = 0.0;
};

// Gains that keep the observer's total lithium constant.
NegativeGains observer_gains_neg(double r_hat, const PositiveGains& pos, const BatteryObserverParams& obs,
                                 const CellParams& params);

struct ObserverRhsPos {
  std::vector<double> dc;
  double dr_hat = 0.0;
  double c_ss_hat = 0.0;
  double innovation = 0.0;
};

ObserverRhsPos observer_rhs_pos(const ShellState& obs_shell, double c_ss_meas, double j_in,
                                const BatteryObserverParams& obs, const CellParams& params);

std::vector<double> observer_rhs_neg(const NegParticleState& obs_neg, double innovation, double j_in,
                                     const NegativeGains& gains, const CellParams& params);

// Admissible band for the estimated interface.
inline constexpr double kInterfaceGuard = 1e-3;

// Gaussian sample k of stream `seed`; depends only on (seed, k).
double gaussian_noise(std::uint64_t seed, std::uint64_t k);

struct BatteryScenario {
  CellParams params = CellParams::lfp_reference();
  double c_rate = 5.0;
  double t_end = 300.0;
  double output_dt = 1.0;
  double meas_dt = 1.0;
  std::size_t n_shell = 50;
  std::size_t n_neg = 50;
  std::size_t n_ekf = 20;
  double soc0 = 0.66;       // negative-electrode SoC of the plant
  double soc_hat0 = 0.46;   // negative-electrode SoC of both estimators
  double rp0_fraction = 0.85;
  BatteryObserverParams observer;
  double noise_std = 0.0;   // mol/m^3 on the surface measurement
  std::uint64_t seed = 0;
  bool run_ekf = false;
  bool pin_interface = false;  // observer uses the true r_p
  double safety = 0.4;
};

struct BatterySample {
  double time = 0.0;
  double r_p = 0.0;
  double r_hat = 0.0;
  double r_ekf = 0.0;
  double soc_true = 0.0;
  double soc_bks = 0.0;
  double soc_ekf = 0.0;
  double pos_avg_true = 0.0;   // normalized by c_max,+
  double pos_avg_bks = 0.0;
  double c_ss_true = 0.0;
  double c_ss_meas = 0.0;
  double c_ss_bks = 0.0;
  double voltage = 0.0;
  double n_li_plant = 0.0;
  double n_li_observer = 0.0;
  double weighted_error = 0.0;  // int r^2 (c - c_hat)^2 dr over the common shell
};

struct BatteryRun {
  std::vector<BatterySample> samples;
  bool halted = false;
  std::string halt_reason;
  bool numerical_failure = false;  // halted by a solver failure rather than a validity limit
};

struct BatteryInitial {
  NegParticleState neg;
  ShellState shell;
  NegParticleState neg_hat;
  ShellState shell_hat;
};

// Plant and estimator initial states with equal total lithium.
BatteryInitial initial_states(const BatteryScenario& scenario);

// Plant only; observer columns mirror the plant.
BatteryRun run_discharge(const BatteryScenario& scenario);

// Plant, backstepping observer and optionally the EKF.
BatteryRun run_estimation(const BatteryScenario& scenario);

}  // namespace phasest::battery
