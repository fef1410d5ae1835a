#pragma once

#include <cstddef>
#include <vector>

#include "phasest/numerics.hpp"

namespace phasest::stefan {

/// Material constants of the one-phase melting problem. alpha and beta are
/// derived so they can never drift from k, rho, cp and the latent heat.
struct StefanParams {
  double k = 116.0;        // W/m/K
  double rho = 6570.0;     // kg/m^3
  double cp = 389.5;       // J/kg/K
  double latent = 1.12e5;  // J/kg
  double t_melt = 420.0;   // melting temperature
  double domain_length = 1.0;  // m

  double alpha() const { return k / (rho * cp); }
  double beta() const { return k / (rho * latent); }

  void validate() const;
};

/// Liquid temperature on the normalized grid xi in [0,1] (x = xi * s).
struct StefanState {
  double s = 0.0;
  std::vector<double> theta;
  double time = 0.0;
  bool valid = true;
};

/// Piecewise-constant boundary heat flux q_c(t) in W/m^2.
class HeatInput {
 public:
  struct Segment {
    double t_start;
    double value;
  };

  HeatInput() = default;
  explicit HeatInput(std::vector<Segment> segments);
  static HeatInput constant(double value);

  double operator()(double t) const;
  // Exact integral of q_c over [t0, t1].
  double integral(double t0, double t1) const;
  bool nonnegative() const;
  const std::vector<Segment>& segments() const { return segments_; }

 private:
  std::vector<Segment> segments_{{0.0, 0.0}};
};

struct StefanRhs {
  std::vector<double> dtheta;
  double ds = 0.0;
};

struct StefanDiagnostics {
  double min_excess = 0.0;      // min(theta - Tm)
  std::size_t argmin = 0;       // node of the minimum
  double margin_low = 0.0;      // s
  double margin_high = 0.0;     // L - s
  bool valid = true;
};

struct SimulationOptions {
  std::size_t output_stride = 100;
  double safety = 0.4;
  bool strict_validity = false;
  double validity_tolerance = 1e-9;
};

// Smallest admissible interface position relative to the domain length.
inline constexpr double kMinInterfaceFraction = 1e-6;

// Normalized-coordinate interior derivative of the Stefan system.
StefanRhs immobilized_rhs(const StefanState& state, const StefanParams& params, double q_c);

// In-place variant used by the integrators.
void immobilized_rhs(double s, std::span<const double> theta, const StefanParams& params, double q_c,
                     std::span<double> dtheta, double& ds);

// Interface gradient dtheta/dxi at xi = 1 by the 3-point one-sided formula.
double interface_gradient_xi(std::span<const double> theta);

StefanDiagnostics validate_state(const StefanState& state, const StefanParams& params);

std::vector<StefanState> simulate(const StefanParams& params, const HeatInput& input, double s0,
                                  const std::vector<double>& theta0, double t_end,
                                  const SimulationOptions& options = {});

// Lumped energy E = (1/alpha) int_0^s (T - Tm) dx + s / beta.
double stored_energy(const StefanState& state, const StefanParams& params);

// E(t) - E(0) - int_0^t q_c/k for every sample of the trajectory.
std::vector<double> energy_balance(const std::vector<StefanState>& trajectory, const HeatInput& input,
                                   const StefanParams& params);

// Initial profile Tm + (q0/k)(s0 - x) + bump * cos(pi x / (2 s0)), which
// meets both boundary conditions at t = 0.
std::vector<double> compatible_profile(const StefanParams& params, double s0, double q0, double bump,
                                       std::size_t n_points);

}  // namespace phasest::stefan
