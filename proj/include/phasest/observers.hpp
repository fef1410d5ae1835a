#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "phasest/stefan.hpp"

namespace phasest::observers {

struct FullObserverConfig {
  double lambda = 0.02;  // 1/s
};

struct JointObserverConfig {
  double lambda = 0.02;  // 1/s
  double l_gain = 2e-5;  // m/(s K)
};

/// Estimated temperature on the normalized grid over [0, s_hat].
struct ObserverState {
  double s_hat = 0.0;
  std::vector<double> theta_hat;
  double time = 0.0;
};

struct ObserverRhs {
  std::vector<double> dtheta;
  double ds = 0.0;
};

// p1(x, s) = lambda s (s - x) I2(z) / (s^2 - (x - s)^2), z^2 = (lambda/alpha)(s^2 - (x - s)^2).
double gain_p1(double x, double s_meas, double lambda, double alpha);

// p2(s) = -lambda s / (2 alpha).
double gain_p2(double s_meas, double lambda, double alpha);

// Two measurements: Y1 = s(t), Y2 = T(0,t). y1_rate is dY1/dt, needed because
// the normalized grid follows the measured interface.
ObserverRhs observer_rhs_full(const ObserverState& obs, double y1, double y1_rate, double y2, double q_c,
                              const FullObserverConfig& cfg, const stefan::StefanParams& params);

// One measurement Y = T(0,t); the interface is estimated by an ODE with injection gain l.
ObserverRhs observer_rhs_joint(const ObserverState& obs, double y, double q_c, const JointObserverConfig& cfg,
                               const stefan::StefanParams& params);

// Copy of the plant for the PDE plus the same interface ODE injection.
ObserverRhs baseline_observer_rhs(const ObserverState& obs, double y, double q_c, double l_gain,
                                  const stefan::StefanParams& params);

/// Closed-form backstepping kernels on the triangle 0 <= y <= x <= D.
/// u = w + int_0^x P(x,y) w(y) dy and its inverse w = u + int_0^x Q(x,y) u(y) dy.
class KernelSet {
 public:
  KernelSet(double lambda, double alpha, double domain);

  double P(double x, double y) const;
  double Q(double x, double y) const;
  double lambda() const { return lambda_; }
  double alpha() const { return alpha_; }
  double domain() const { return domain_; }

 private:
  double lambda_;
  double alpha_;
  double domain_;
};

KernelSet kernel_solution(double lambda, double alpha, double domain);

struct KernelResidual {
  double p_max = 0.0;
  double q_max = 0.0;
  double max() const { return p_max > q_max ? p_max : q_max; }
};

// Max over interior triangle nodes of P_xx - P_yy + (lambda/alpha) P and
// Q_xx - Q_yy - (lambda/alpha) Q on a grid of spacing D / grid_n.
KernelResidual kernel_residual(const KernelSet& kernels, std::size_t grid_n);

using Kernel = std::function<double(double, double)>;

// out(x_i) = f(x_i) + int_0^{x_i} K(x_i, y) f(y) dy on a uniform grid over [0, D].
std::vector<double> volterra_transform(const Kernel& kernel, const std::vector<double>& profile, double domain);

struct ErrorNorms {
  double l2 = 0.0;
  double h1_semi = 0.0;
  double h1 = 0.0;
};

// Norms of T - T_hat over [0, min(s, s_hat)] on a common grid.
ErrorNorms h1_error_norm(const stefan::StefanState& plant, const ObserverState& obs);

// Temperature at physical position x; beyond the interface the material
// sits at the melting temperature.
double temperature_at(std::span<const double> theta, double s, double x, double t_melt);

enum class StefanObserverMode { Full, Joint, Baseline, OpenLoop };

std::string to_string(StefanObserverMode mode);
StefanObserverMode stefan_mode_from_string(const std::string& name);

struct StefanEstimationScenario {
  stefan::StefanParams params;
  stefan::HeatInput input = stefan::HeatInput::constant(1e5);
  std::size_t n_points = 51;
  double s0 = 0.1;
  double plant_bump = 30.0;     // K, amplitude of the cosine bump in the true profile
  double s_hat0 = 0.1;
  double observer_bump = 0.0;   // K
  double observer_q0 = -1.0;    // flux used to build the estimated profile; < 0 means input(0)
  StefanObserverMode mode = StefanObserverMode::Full;
  double lambda = 0.02;
  double l_gain = 2e-5;
  double t_end = 300.0;
  double output_dt = 1.0;
  double safety = 0.4;
};

struct StefanEstimationSample {
  double time = 0.0;
  double s = 0.0;
  double s_hat = 0.0;
  ErrorNorms norms;
  std::array<double, 4> probe_true{};
  std::array<double, 4> probe_est{};
  bool plant_valid = true;
};

struct StefanEstimationRun {
  std::vector<StefanEstimationSample> samples;
  bool halted = false;
  std::string halt_reason;
  bool numerical_failure = false;
};

inline constexpr std::array<double, 4> kProbeFractions{0.0, 0.25, 0.5, 0.75};

// Co-simulates the plant and one observer and records errors at output_dt.
StefanEstimationRun run_stefan_estimation(const StefanEstimationScenario& scenario);

}  // namespace phasest::observers
