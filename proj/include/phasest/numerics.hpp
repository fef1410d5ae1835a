#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace phasest {

/// Bad input: violated precondition, out-of-range argument, malformed config.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The numerics broke down (non-finite values, zero pivot, step underflow).
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model left its physical validity region (interface left the domain,
/// phase collapsed) and the run was halted.
class ValidityHalt : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace numerics {

/// Uniform grid on [0, 1].
class GridSpec {
 public:
  explicit GridSpec(std::size_t n_points);

  std::size_t size() const { return n_; }
  double spacing() const { return 1.0 / static_cast<double>(n_ - 1); }
  double node(std::size_t i) const { return static_cast<double>(i) * spacing(); }
  std::vector<double> nodes() const;

 private:
  std::size_t n_;
};

struct TridiagonalSystem {
  std::vector<double> sub;    // length n-1, row i+1 coefficient of x[i]
  std::vector<double> main;   // length n
  std::vector<double> super;  // length n-1
  std::vector<double> rhs;    // length n
};

// Modified Bessel function of the first kind, orders 0..3, z in [0, 600].
double bessel_i(int order, double z);

// Bessel function of the first kind, orders 0..2, z >= 0.
double bessel_j(int order, double z);

// I_order(z) / z^order with the removable singularity at z = 0 filled in.
double bessel_ratio_i(int order, double z);

// J_1(z) / z, equal to 1/2 at z = 0.
double bessel_ratio_j1(double z);

// Thomas algorithm. Requires weak diagonal dominance.
std::vector<double> solve_tridiagonal(const TridiagonalSystem& system);

// Composite trapezoid rule on uniformly spaced samples.
double integrate_trapezoid(std::span<const double> values, double spacing);

// Composite Simpson rule; falls back to trapezoid on the last panel when the
// number of intervals is odd.
double integrate_simpson(std::span<const double> values, double spacing);

using RhsFunction = std::function<std::vector<double>(double, const std::vector<double>&)>;

/// One classical fourth-order Runge-Kutta step.
std::vector<double> rk4_step(const RhsFunction& rhs, double t, const std::vector<double>& y, double h);

/// Allocation-free RK4 stepper for the simulation loops.
class Rk4Stepper {
 public:
  using Rhs = std::function<void(double, const std::vector<double>&, std::vector<double>&)>;

  explicit Rk4Stepper(std::size_t dim);

  // Advances y in place from t to t + h.
  void step(const Rhs& rhs, double t, std::vector<double>& y, double h);

 private:
  std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

/// Largest stable explicit step for a diffusion operator with the given
/// diffusivity in normalized coordinates: safety * dxi^2 / (2 * diffusivity).
double diffusion_step_bound(double dxi, double normalized_diffusivity, double safety = 0.4);

// Linear interpolation of samples on a uniform [0,1] grid.
double interpolate_uniform(std::span<const double> values, double xi);

bool all_finite(std::span<const double> values);

}  // namespace numerics
}  // namespace phasest
