#include "phasest/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace phasest::numerics {

namespace {

constexpr double kSeriesLimit = 30.0;
constexpr double kOverflowGuard = 600.0;

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

// sum_k (z^2/4)^k / (k! (k+order)!) scaled by `lead`
double ascending_series_i(int order, double z, double lead) {
  const double q = 0.25 * z * z;
  double term = lead;
  double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k + order));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

double asymptotic_i(int order, double z) {
  const double mu = 4.0 * order * order;
  double term = 1.0;
  double sum = 1.0;
  double last = 1.0;
  for (int k = 1; k < 40; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * z);
    if (std::abs(term) > last) break;
    sum += term;
    last = std::abs(term);
    if (last < 1e-17 * std::abs(sum)) break;
  }
  return std::exp(z) / std::sqrt(2.0 * std::numbers::pi * z) * sum;
}

void check_i_args(int order, double z, int max_order) {
  if (order < 0 || order > max_order) {
    throw InvalidArgument("bessel order " + std::to_string(order) + " outside 0.." + std::to_string(max_order));
  }
  if (!(z >= 0.0)) throw InvalidArgument("bessel argument must be nonnegative");
  if (z > kOverflowGuard) throw InvalidArgument("bessel argument beyond overflow guard (600)");
}

double series_j(int order, double z) {
  const double q = -0.25 * z * z;
  double term = std::pow(0.5 * z, order) / factorial(order);
  double sum = term;
  for (int k = 1; k < 200; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k + order));
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum) + 1e-300) break;
  }
  return sum;
}

// Miller's backward recurrence normalized by J0 + 2 sum J_2k = 1.
double miller_j(int order, double z) {
  int start = 2 * (static_cast<int>(z) / 2 + 30);
  double next = 0.0;
  double cur = 1e-30;
  double norm = 0.0;
  double wanted = 0.0;
  for (int k = start; k >= 1; --k) {
    const double prev = 2.0 * k / z * cur - next;
    next = cur;
    cur = prev;  // J_{k-1}
    if (std::abs(cur) > 1e200) {
      cur *= 1e-200;
      next *= 1e-200;
      norm *= 1e-200;
      wanted *= 1e-200;
    }
    const int idx = k - 1;
    if (idx == order) wanted = cur;
    if (idx > 0 && idx % 2 == 0) norm += 2.0 * cur;
  }
  norm += cur;
  return wanted / norm;
}

}  // namespace

GridSpec::GridSpec(std::size_t n_points) : n_(n_points) {
  if (n_points < 3) throw InvalidArgument("grid needs at least 3 points");
}

std::vector<double> GridSpec::nodes() const {
  std::vector<double> x(n_);
  for (std::size_t i = 0; i < n_; ++i) x[i] = node(i);
  x.back() = 1.0;
  return x;
}

double bessel_i(int order, double z) {
  check_i_args(order, z, 3);
  if (z <= kSeriesLimit) {
    if (z == 0.0) return order == 0 ? 1.0 : 0.0;
    return ascending_series_i(order, z, std::pow(0.5 * z, order) / factorial(order));
  }
  return asymptotic_i(order, z);
}

double bessel_ratio_i(int order, double z) {
  if (order < 1 || order > 3) throw InvalidArgument("bessel_ratio_i order must be 1..3");
  check_i_args(order, z, 3);
  if (z <= kSeriesLimit) {
    return ascending_series_i(order, z, std::pow(0.5, order) / factorial(order));
  }
  return asymptotic_i(order, z) / std::pow(z, order);
}

double bessel_j(int order, double z) {
  if (order < 0 || order > 2) throw InvalidArgument("bessel_j order must be 0..2");
  if (!(z >= 0.0)) throw InvalidArgument("bessel argument must be nonnegative");
  if (z == 0.0) return order == 0 ? 1.0 : 0.0;
  if (z <= 2.0) return series_j(order, z);
  return miller_j(order, z);
}

double bessel_ratio_j1(double z) {
  if (!(z >= 0.0)) throw InvalidArgument("bessel argument must be nonnegative");
  if (z <= 2.0) {
    const double q = -0.25 * z * z;
    double term = 0.5;
    double sum = term;
    for (int k = 1; k < 60; ++k) {
      term *= q / (static_cast<double>(k) * static_cast<double>(k + 1));
      sum += term;
      if (std::abs(term) < 1e-18) break;
    }
    return sum;
  }
  return bessel_j(1, z) / z;
}

std::vector<double> solve_tridiagonal(const TridiagonalSystem& system) {
  const std::size_t n = system.main.size();
  if (n == 0 || system.rhs.size() != n || system.sub.size() + 1 != n || system.super.size() + 1 != n) {
    throw InvalidArgument("tridiagonal system has inconsistent lengths");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (system.main[i] == 0.0) throw NumericalFailure("tridiagonal solve: zero pivot in row " + std::to_string(i));
    const double off = (i > 0 ? std::abs(system.sub[i - 1]) : 0.0) + (i + 1 < n ? std::abs(system.super[i]) : 0.0);
    if (std::abs(system.main[i]) < off * (1.0 - 1e-12)) {
      throw InvalidArgument("tridiagonal solve: row " + std::to_string(i) + " is not diagonally dominant");
    }
  }
  std::vector<double> c(n, 0.0);
  std::vector<double> d(n, 0.0);
  double pivot = system.main[0];
  c[0] = n > 1 ? system.super[0] / pivot : 0.0;
  d[0] = system.rhs[0] / pivot;
  for (std::size_t i = 1; i < n; ++i) {
    pivot = system.main[i] - system.sub[i - 1] * c[i - 1];
    if (pivot == 0.0) throw NumericalFailure("tridiagonal solve: zero pivot in row " + std::to_string(i));
    c[i] = i + 1 < n ? system.super[i] / pivot : 0.0;
    d[i] = (system.rhs[i] - system.sub[i - 1] * d[i - 1]) / pivot;
  }
  std::vector<double> x(n);
  x[n - 1] = d[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
  return x;
}

double integrate_trapezoid(std::span<const double> values, double spacing) {
  if (values.size() < 2) throw InvalidArgument("trapezoid rule needs at least 2 samples");
  if (!(spacing > 0.0)) throw InvalidArgument("trapezoid spacing must be positive");
  double sum = 0.5 * (values.front() + values.back());
  for (std::size_t i = 1; i + 1 < values.size(); ++i) sum += values[i];
  return sum * spacing;
}

double integrate_simpson(std::span<const double> values, double spacing) {
  const std::size_t n = values.size();
  if (n < 3) return integrate_trapezoid(values, spacing);
  const std::size_t intervals = n - 1;
  const std::size_t even = intervals - intervals % 2;
  double sum = values[0] + values[even];
  for (std::size_t i = 1; i < even; ++i) sum += (i % 2 == 1 ? 4.0 : 2.0) * values[i];
  double total = sum * spacing / 3.0;
  if (even != intervals) total += 0.5 * spacing * (values[n - 2] + values[n - 1]);
  return total;
}

std::vector<double> rk4_step(const RhsFunction& rhs, double t, const std::vector<double>& y, double h) {
  if (!(h > 0.0)) throw InvalidArgument("rk4_step needs a positive step");
  auto eval = [&](double tt, const std::vector<double>& yy) {
    auto d = rhs(tt, yy);
    if (d.size() != yy.size() || !all_finite(d)) throw NumericalFailure("non-finite derivative in rk4_step");
    return d;
  };
  const std::size_t n = y.size();
  std::vector<double> tmp(n);
  const auto k1 = eval(t, y);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
  const auto k2 = eval(t + 0.5 * h, tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
  const auto k3 = eval(t + 0.5 * h, tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
  const auto k4 = eval(t + h, tmp);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

Rk4Stepper::Rk4Stepper(std::size_t dim) : k1_(dim), k2_(dim), k3_(dim), k4_(dim), tmp_(dim) {}

void Rk4Stepper::step(const Rhs& rhs, double t, std::vector<double>& y, double h) {
  const std::size_t n = y.size();
  rhs(t, y, k1_);
  for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + 0.5 * h * k1_[i];
  rhs(t + 0.5 * h, tmp_, k2_);
  for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + 0.5 * h * k2_[i];
  rhs(t + 0.5 * h, tmp_, k3_);
  for (std::size_t i = 0; i < n; ++i) tmp_[i] = y[i] + h * k3_[i];
  rhs(t + h, tmp_, k4_);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += h / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
  }
  if (!all_finite(y)) throw NumericalFailure("non-finite state after RK4 step at t = " + std::to_string(t));
}

double diffusion_step_bound(double dxi, double normalized_diffusivity, double safety) {
  if (!(normalized_diffusivity > 0.0)) return std::numeric_limits<double>::infinity();
  return safety * dxi * dxi / (2.0 * normalized_diffusivity);
}

double interpolate_uniform(std::span<const double> values, double xi) {
  const std::size_t n = values.size();
  if (n < 2) throw InvalidArgument("interpolation needs at least 2 samples");
  const double pos = std::clamp(xi, 0.0, 1.0) * static_cast<double>(n - 1);
  const std::size_t i = std::min(static_cast<std::size_t>(pos), n - 2);
  const double w = pos - static_cast<double>(i);
  return (1.0 - w) * values[i] + w * values[i + 1];
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace phasest::numerics
