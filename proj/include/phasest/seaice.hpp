#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "phasest/numerics.hpp"

namespace phasest::seaice {

inline constexpr double kSecondsPerDay = 86400.0;
inline constexpr double kSecondsPerMonth = 365.0 / 12.0 * kSecondsPerDay;
inline constexpr double kKelvinOffset = 273.0;

struct SalinitySpec {
  double A = 1.6;       // ppt
  double n_exp = 0.407;
  double m_exp = 0.573;
};

// S(x) = A [1 - cos(pi (x/H)^(n / (m + x/H)))]
double salinity(double x, double H, const SalinitySpec& spec);

struct SeaIceParams {
  double rho_s = 330.0;        // kg/m^3
  double k_s = 0.31;           // W/m/C
  double rho = 917.0;          // kg/m^3
  double c0 = 2110.0;          // J/kg/C
  double k0 = 2.034;           // W/m/C
  double gamma1_kj = 18.0;     // kJ C/kg, as tabulated
  double gamma2 = 0.117;       // W/m
  double i0 = 1.59;            // W/m^2
  double kappa_i = 1.5;        // 1/m
  double t_m1 = -0.1;          // C
  double t_m2 = -1.8;          // C
  double sigma = 5.67e-8;      // W/m^2/K^4
  double q_latent = 917.0 * 3.34e5;  // J/m^3
  double f_w = 2.0;            // W/m^2
  SalinitySpec salinity;

  double gamma1() const { return gamma1_kj * 1e3; }  // J C/kg
  double diffusivity() const { return k0 / (rho * c0); }
  double beta() const { return k0 / q_latent; }
  double snow_diffusivity() const { return k_s / (rho_s * c0); }

  void validate() const;
};

struct Coefficients {
  double c;  // J/kg/C
  double k;  // W/m/C
};

// c_i = c0 + gamma1 S / T^2, k_i = k0 + gamma2 S / T. Throws for |T| < 1e-3 C.
Coefficients effective_coeffs(double t_ice, double s, const SeaIceParams& params);

struct MonthRow {
  double fr = 0.0;   // incoming short-wave
  double fl_long = 0.0;  // long-wave from atmosphere and clouds
  double fs = 0.0;   // sensible heat
  double fl = 0.0;   // latent heat
  std::optional<double> albedo;  // absent in the dark months

  // F_a = (1 - albedo) Fr + FL + Fs + Fl
  double total() const;
};

class MonthlyForcing {
 public:
  MonthlyForcing() = default;
  explicit MonthlyForcing(std::array<MonthRow, 12> rows);

  // Average monthly fluxes of the MU71 climatology.
  static MonthlyForcing table1();
  // CSV with header month,Fr,FL,Fs,Fl,albedo; empty albedo marks a dark month.
  static MonthlyForcing load_csv(const std::string& path);
  // The same forcing every month.
  static MonthlyForcing uniform(const MonthRow& row);

  const MonthRow& month(std::size_t index) const { return rows_.at(index); }
  const std::array<MonthRow, 12>& rows() const { return rows_; }

  // Month index in 0..11 for time t measured from the start of `start_month`.
  static std::size_t month_at(double t, std::size_t start_month = 0);
  double total_flux_at(double t, std::size_t start_month = 0) const;

  // Snow accumulation per month in m/s, zero by default.
  std::array<double, 12> accumulation{};

 private:
  std::array<MonthRow, 12> rows_{};
};

/// Snow on x in [-h, 0] (eta = 0 at the snow surface), ice on x in [0, H]
/// (xi = 0 at the ice top). Both profiles live on normalized uniform grids.
struct SeaIceState {
  double h = 0.0;
  double H = 0.0;
  std::vector<double> t_snow;
  std::vector<double> t_ice;
  double time = 0.0;
  bool snow_active = false;

  double surface_temperature() const { return snow_active ? t_snow.front() : t_ice.front(); }
};

struct SurfaceSolution {
  double temperature = 0.0;  // C
  double melt_rate = 0.0;    // m/s of surface lowering, >= 0
  bool clamped = false;
  double residual = 0.0;     // W/m^2 left over at the returned temperature
};

// Solves F_a - I0 - sigma (T+273)^4 + k (-3T + 4 t1 - t2) / (2 dx) = 0 for the
// surface temperature T. Above the melting point T is clamped to Tm1 and the
// excess energy melts the surface.
SurfaceSolution solve_surface(double f_a, double k, double t1, double t2, double dx, const SeaIceParams& params);

// Surface solve on the current layer (snow if present, bare ice otherwise).
// Returns the surface temperature and dh/dt from ablation (<= 0).
struct SurfaceStep {
  double temperature;
  double h_dot;
};
SurfaceStep surface_step(const SeaIceState& state, double f_a, const SeaIceParams& params);

struct SeaIceOptions {
  std::size_t n_ice = 100;
  std::size_t n_snow = 10;
  double h_min = 0.02;   // m, thinner snow is dropped
  double safety = 0.4;
  bool salinity_on = true;
  double max_step = 3600.0;  // s
  double output_dt = kSecondsPerDay;
  double H_min = 0.05;   // m, thinner ice is a phase collapse
};

struct SeaIceDerivatives {
  std::vector<double> d_snow;
  std::vector<double> d_ice;
  double dh = 0.0;
  double dH = 0.0;
  double top_rate = 0.0;     // downward speed of the ice top (ablation)
  double bottom_rate = 0.0;  // downward speed of the ice bottom (growth)
  double surface_temperature = 0.0;
  double interface_temperature = 0.0;
};

// Time derivatives of every node. The surface node and the snow/ice interface
// node are algebraic; their derivatives are zero and `apply_constraints`
// writes their values.
SeaIceDerivatives seaice_rhs(const SeaIceState& state, double f_a, double accumulation, const SeaIceParams& params,
                             bool salinity_on);

// Writes the algebraic surface, interface, and bottom node values.
void apply_constraints(SeaIceState& state, double f_a, const SeaIceParams& params);

// Linear snow profile and sinusoid-perturbed ice profile with the surface
// temperature solved from the energy balance of month `start_month`.
SeaIceState initial_state(const SeaIceParams& params, const MonthlyForcing& forcing, std::size_t start_month,
                          double H0, double h0, double amplitude, const SeaIceOptions& options);

// Ice-top temperature that balances the surface energy budget for the
// initial linear profiles.
double initial_top_temperature(const SeaIceParams& params, double f_a, double H0, double h0);

struct AnnualSummary {
  std::vector<double> max_thickness;   // per simulated year
  std::vector<double> min_thickness;
  std::vector<std::size_t> month_of_max;
  std::vector<std::size_t> month_of_min;
  // max |maxH_y - maxH_{y-1}| / maxH_{y-1} over years after the spin-up
  double periodicity(std::size_t spinup_years) const;
};

struct SeaIceTrajectory {
  std::vector<SeaIceState> states;
  AnnualSummary annual;
};

SeaIceTrajectory simulate_annual(const SeaIceParams& params, const MonthlyForcing& forcing, const SeaIceState& init,
                                 std::size_t years, const SeaIceOptions& options = {}, std::size_t start_month = 0);

// Largest stable explicit step for the current layer geometry.
double stable_step(const SeaIceState& state, const SeaIceParams& params, double safety = 0.4);

struct SeaIceObserverParams {
  double lambda = 5e-6;    // 1/s
  double c = 3e-5;         // 1/s
  double epsilon = 1e-8;   // C/m
  double M = 1.9e-7;       // m/s
  double H_bar = 10.0;     // m
  // Relative errors in D_i, beta, F_w used by the observer.
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  bool open_loop = false;

  void validate() const;
  // Heuristic c > lambda and c > M / H_bar check; advisory only.
  bool c_condition_plausible() const;
};

struct SeaIceGains {
  std::vector<double> p1;  // on the observer grid over [0, H]
  double p2 = 0.0;
  double p3 = 0.0;
  double p4 = 0.0;
};

// p1 at a single point x in [0, H].
double gain_p1(double x, double H, const SeaIceObserverParams& obs, double D, double beta);

SeaIceGains observer_gains(double H, const SeaIceObserverParams& obs, const SeaIceParams& params, std::size_t n);

struct SeaIceObserverState {
  double H_hat = 0.0;
  std::vector<double> t_hat;  // normalized grid over [0, Y1]
  double time = 0.0;
};

struct SeaIceObserverDerivatives {
  std::vector<double> d_t;
  double dH_hat = 0.0;
};

// Y1 = H, Y2 = T_i(0). top_rate and bottom_rate are the measured speeds of the
// ice top and bottom that move the observer grid with Y1.
SeaIceObserverDerivatives observer_rhs(const SeaIceObserverState& obs, double y1, double y2, double top_rate,
                                       double bottom_rate, const SeaIceGains& gains,
                                       const SeaIceObserverParams& obs_params, const SeaIceParams& params);

// Dirichlet values T_hat(0) = Y2 - p2 (Y1 - H_hat) and T_hat(Y1) = Tm2 - p3 (Y1 - H_hat).
void apply_observer_boundaries(SeaIceObserverState& obs, double y1, double y2, const SeaIceGains& gains,
                               const SeaIceParams& params);

struct SeaIceEstimationConfig {
  SeaIceParams params;
  MonthlyForcing forcing = MonthlyForcing::table1();
  SeaIceOptions options;
  SeaIceObserverParams observer;
  std::size_t start_month = 0;
  double H0 = 2.8;
  double h0 = 0.3;
  double amplitude = 1.0;  // C
  double d = 0.25;
  double t_end = 20.0 * kSecondsPerDay;
  double output_dt = 3600.0;
};

struct SeaIceEstimationSample {
  double time = 0.0;
  double H = 0.0;
  double H_hat = 0.0;
  double l2_error = 0.0;     // || T_hat - T ||_L2 over [0, H]
  double max_overshoot = 0.0;  // max(T_hat - T)
  double surface_temperature = 0.0;
  std::array<double, 4> probe_true{};  // at xi = 0.25, 0.5, 0.75, 0.9
  std::array<double, 4> probe_est{};
};

inline constexpr std::array<double, 4> kIceProbes{0.25, 0.5, 0.75, 0.9};

struct SeaIceEstimationRun {
  std::vector<SeaIceEstimationSample> samples;
};

// Estimated initial profile (Tm - T0)/(H0^2 (1 - 2d)) (x^2 - 2 d H0 x) + T0.
std::vector<double> estimate_initial_profile(double T0, double H0, double t_melt, double d, std::size_t n);

SeaIceEstimationRun run_seaice_estimation(const SeaIceEstimationConfig& config);

struct RobustnessMetrics {
  double settle_day = 0.0;       // first day after which |H_tilde| stays in the band
  double band = 0.0;             // band_fraction * initial L2 profile error, read as metres
  double peak_thickness_error = 0.0;
  double tail_thickness_error = 0.0;  // max |H_tilde| after day 5
  double tail_profile_error = 0.0;    // max L2 profile error after day 5
  double initial_profile_error = 0.0;
};

RobustnessMetrics robustness_metrics(const SeaIceEstimationRun& run, double band_fraction = 0.1,
                                     double from_day = 5.0);

SeaIceEstimationRun robustness_run(SeaIceEstimationConfig config, double delta1, double delta2, double delta3);

}  // namespace phasest::seaice
