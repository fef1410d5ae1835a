#include "phasest/seaice.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace phasest::seaice {

namespace {

constexpr double kTemperatureGuard = 1e-3;
constexpr double kSurfaceLow = -60.0;
constexpr double kSurfaceHigh = 0.0;

double pow4(double x) {
  const double x2 = x * x;
  return x2 * x2;
}

std::vector<double> salinity_profile(std::size_t n, const SalinitySpec& spec) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = salinity(static_cast<double>(i) / static_cast<double>(n - 1), 1.0, spec);
  return s;
}

// Packed plant state: [snow nodes, ice nodes, h, H].
struct Layout {
  std::size_t ns;
  std::size_t ni;
  std::size_t snow(std::size_t j) const { return j; }
  std::size_t ice(std::size_t i) const { return ns + i; }
  std::size_t h() const { return ns + ni; }
  std::size_t H() const { return ns + ni + 1; }
  std::size_t size() const { return ns + ni + 2; }
};

struct PlantRates {
  double top_rate = 0.0;
  double bottom_rate = 0.0;
  double surface = 0.0;
  double interface = 0.0;
};

// Computes the algebraic nodes for the packed state in `y` and writes the
// resolved profiles into ts/ti.
PlantRates resolve_nodes(const double* y, const Layout& L, bool snow_active, double f_a, const SeaIceParams& p,
                         std::vector<double>& ts, std::vector<double>& ti) {
  const double h = y[L.h()];
  const double H = y[L.H()];
  ts.assign(y, y + L.ns);
  ti.assign(y + L.ns, y + L.ns + L.ni);
  const double dx_i = H / static_cast<double>(L.ni - 1);
  ti[L.ni - 1] = p.t_m2;
  PlantRates r;
  if (snow_active) {
    const double dx_s = h / static_cast<double>(L.ns - 1);
    const double a_s = p.k_s / (2.0 * dx_s);
    const double a_i = p.k0 / (2.0 * dx_i);
    const double t_if = (a_s * (4.0 * ts[L.ns - 2] - ts[L.ns - 3]) + a_i * (4.0 * ti[1] - ti[2])) / (3.0 * (a_s + a_i));
    ts[L.ns - 1] = t_if;
    ti[0] = t_if;
    const auto surf = solve_surface(f_a, p.k_s, ts[1], ts[2], dx_s, p);
    ts[0] = surf.temperature;
    r.surface = surf.temperature;
    r.interface = t_if;
    r.top_rate = surf.melt_rate;  // consumed by the snow, see callers
  } else {
    const auto surf = solve_surface(f_a, p.k0, ti[1], ti[2], dx_i, p);
    ti[0] = surf.temperature;
    r.surface = surf.temperature;
    r.interface = surf.temperature;
    r.top_rate = surf.melt_rate;
  }
  return r;
}

struct PlantContext {
  const SeaIceParams& params;
  Layout layout;
  const std::vector<double>& salinity;  // on the ice grid, per xi
  bool salinity_on;
  bool snow_active;
  double f_a = 0.0;
  double accumulation = 0.0;
  std::vector<double> ts, ti;
};

// Returns rates; fills dy over the packed layout.
PlantRates plant_rhs(PlantContext& ctx, const double* y, double* dy) {
  const auto& p = ctx.params;
  const auto& L = ctx.layout;
  const double h = y[L.h()];
  const double H = y[L.H()];
  if (!(H > 0.0)) throw ValidityHalt("ice thickness collapsed");
  PlantRates r = resolve_nodes(y, L, ctx.snow_active, ctx.f_a, p, ctx.ts, ctx.ti);
  const auto& ts = ctx.ts;
  const auto& ti = ctx.ti;

  double melt = r.top_rate;
  double dh = ctx.accumulation;
  double top_rate = 0.0;
  if (ctx.snow_active) {
    dh -= melt;
  } else if (h > 0.0) {
    dh -= melt;  // a thin dropped-out snow cover melts first
  } else {
    top_rate = melt;
  }
  r.top_rate = top_rate;

  const std::size_t ni = L.ni;
  const double dxi = 1.0 / static_cast<double>(ni - 1);
  const double k_bottom = ctx.salinity_on ? effective_coeffs(p.t_m2, ctx.salinity[ni - 1], p).k : p.k0;
  const double grad_bottom = (3.0 * ti[ni - 1] - 4.0 * ti[ni - 2] + ti[ni - 3]) / (2.0 * dxi * H);
  r.bottom_rate = (k_bottom * grad_bottom - p.f_w) / p.q_latent;

  dy[L.ice(0)] = 0.0;
  dy[L.ice(ni - 1)] = 0.0;
  for (std::size_t i = 1; i + 1 < ni; ++i) {
    const double xi = static_cast<double>(i) * dxi;
    const double x = xi * H;
    double c = p.c0, k = p.k0;
    if (ctx.salinity_on) {
      const auto co = effective_coeffs(ti[i], ctx.salinity[i], p);
      c = co.c;
      k = co.k;
    }
    const double t_xx = (ti[i + 1] - 2.0 * ti[i] + ti[i - 1]) / (dxi * dxi * H * H);
    const double t_x = (ti[i + 1] - ti[i - 1]) / (2.0 * dxi * H);
    const double source = p.i0 * p.kappa_i * std::exp(-p.kappa_i * x);
    const double speed = top_rate * (1.0 - xi) + r.bottom_rate * xi;
    dy[L.ice(i)] = (k * t_xx + source) / (p.rho * c) + t_x * speed;
  }

  const std::size_t ns = L.ns;
  for (std::size_t j = 0; j < ns; ++j) dy[L.snow(j)] = 0.0;
  if (ctx.snow_active) {
    const double deta = 1.0 / static_cast<double>(ns - 1);
    const double ds = p.snow_diffusivity();
    for (std::size_t j = 1; j + 1 < ns; ++j) {
      const double eta = static_cast<double>(j) * deta;
      const double t_xx = (ts[j + 1] - 2.0 * ts[j] + ts[j - 1]) / (deta * deta * h * h);
      const double t_x = (ts[j + 1] - ts[j - 1]) / (2.0 * deta * h);
      dy[L.snow(j)] = ds * t_xx + t_x * (-dh * (1.0 - eta));
    }
  }
  dy[L.h()] = dh;
  dy[L.H()] = r.bottom_rate - top_rate;
  return r;
}

std::vector<double> pack(const SeaIceState& s) {
  std::vector<double> y(s.t_snow);
  y.insert(y.end(), s.t_ice.begin(), s.t_ice.end());
  y.push_back(s.h);
  y.push_back(s.H);
  return y;
}

void unpack(const std::vector<double>& y, const Layout& L, SeaIceState& s) {
  std::copy(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(L.ns), s.t_snow.begin());
  std::copy(y.begin() + static_cast<std::ptrdiff_t>(L.ns), y.begin() + static_cast<std::ptrdiff_t>(L.ns + L.ni),
            s.t_ice.begin());
  s.h = y[L.h()];
  s.H = y[L.H()];
}

void check_state(const SeaIceState& s) {
  if (s.t_ice.size() < 4) throw InvalidArgument("ice grid needs at least 4 nodes");
  if (s.t_snow.size() < 4) throw InvalidArgument("snow grid needs at least 4 nodes");
  if (!(s.H > 0.0)) throw InvalidArgument("ice thickness must be positive");
  if (s.snow_active && !(s.h > 0.0)) throw InvalidArgument("active snow layer needs positive depth");
}

// Keeps snow bookkeeping consistent after an accepted step.
void update_layers(SeaIceState& s, double f_a, const SeaIceParams& p, const SeaIceOptions& o) {
  if (s.h < 0.0) s.h = 0.0;
  if (s.snow_active && s.h < o.h_min) {
    s.snow_active = false;
    s.h = 0.0;
  } else if (!s.snow_active && s.h >= o.h_min) {
    s.snow_active = true;
    std::fill(s.t_snow.begin(), s.t_snow.end(), s.t_ice.front());
  }
  apply_constraints(s, f_a, p);
}

}  // namespace

double salinity(double x, double H, const SalinitySpec& spec) {
  if (!(H > 0.0)) throw InvalidArgument("salinity: thickness must be positive");
  const double tol = 1e-12 * H;
  if (x < -tol || x > H + tol) throw InvalidArgument("salinity: x outside [0, H]");
  const double r = std::clamp(x / H, 0.0, 1.0);
  const double expo = spec.n_exp / (spec.m_exp + r);
  return spec.A * (1.0 - std::cos(std::numbers::pi * std::pow(r, expo)));
}

void SeaIceParams::validate() const {
  for (double v : {rho_s, k_s, rho, c0, k0, i0, kappa_i, sigma, q_latent}) {
    if (!(v > 0.0)) throw InvalidArgument("sea-ice physical constants must be positive");
  }
  if (!(gamma1_kj >= 0.0 && gamma2 >= 0.0)) throw InvalidArgument("salinity weights must be nonnegative");
  if (!(t_m2 < t_m1 && t_m1 < 0.0)) throw InvalidArgument("melting points must satisfy Tm2 < Tm1 < 0");
  if (!std::isfinite(f_w)) throw InvalidArgument("ocean flux must be finite");
  if (!(salinity.A >= 0.0) || !(salinity.m_exp > 0.0)) throw InvalidArgument("invalid salinity profile");
}

Coefficients effective_coeffs(double t_ice, double s, const SeaIceParams& params) {
  if (!(std::abs(t_ice) >= kTemperatureGuard)) {
    throw InvalidArgument("salinity correction undefined near 0 C");
  }
  if (s < 0.0) throw InvalidArgument("salinity must be nonnegative");
  return {params.c0 + params.gamma1() * s / (t_ice * t_ice), params.k0 + params.gamma2 * s / t_ice};
}

double MonthRow::total() const {
  if (fr != 0.0 && !albedo) throw InvalidArgument("short-wave flux without albedo");
  const double a = albedo.value_or(0.0);
  return (1.0 - a) * fr + fl_long + fs + fl;
}

MonthlyForcing::MonthlyForcing(std::array<MonthRow, 12> rows) : rows_(rows) {
  for (const auto& r : rows_) {
    if (r.albedo && (*r.albedo < 0.0 || *r.albedo > 1.0)) throw InvalidArgument("albedo outside [0, 1]");
    if (!std::isfinite(r.total())) throw InvalidArgument("non-finite forcing");
  }
}

MonthlyForcing MonthlyForcing::table1() {
  return MonthlyForcing({{
      {0.0, 168.0, 19.0, 0.0, std::nullopt},
      {0.0, 166.0, 12.3, -0.323, std::nullopt},
      {30.7, 166.0, 11.6, -0.484, 0.83},
      {160.0, 187.0, 4.68, -1.45, 0.81},
      {286.0, 244.0, -7.26, -7.43, 0.82},
      {310.0, 291.0, -6.30, -11.3, 0.78},
      {220.0, 308.0, -4.84, -10.3, 0.64},
      {145.0, 302.0, -6.46, -10.7, 0.69},
      {59.7, 266.0, -2.74, -6.30, 0.84},
      {6.46, 224.0, 1.61, -3.07, 0.85},
      {0.0, 181.0, 9.04, -0.161, std::nullopt},
      {0.0, 176.0, 12.8, -0.161, std::nullopt},
  }});
}

MonthlyForcing MonthlyForcing::uniform(const MonthRow& row) {
  std::array<MonthRow, 12> rows;
  rows.fill(row);
  return MonthlyForcing(rows);
}

MonthlyForcing MonthlyForcing::load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open forcing table " + path);
  std::string line;
  std::array<MonthRow, 12> rows;
  std::array<bool, 12> seen{};
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      if (line != "month,Fr,FL,Fs,Fl,albedo") throw InvalidArgument("forcing table: unexpected header '" + line + "'");
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == 5) cells.emplace_back();
    if (cells.size() != 6) throw InvalidArgument("forcing table: line " + std::to_string(line_no) + " needs 6 columns");
    try {
      const int m = std::stoi(cells[0]);
      if (m < 1 || m > 12) throw InvalidArgument("forcing table: month out of range on line " + std::to_string(line_no));
      MonthRow r{std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]), std::nullopt};
      if (!cells[5].empty()) r.albedo = std::stod(cells[5]);
      rows[static_cast<std::size_t>(m - 1)] = r;
      seen[static_cast<std::size_t>(m - 1)] = true;
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const InvalidArgument*>(&e)) throw;
      throw InvalidArgument("forcing table: bad number on line " + std::to_string(line_no));
    }
  }
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
    throw InvalidArgument("forcing table must list all 12 months");
  }
  return MonthlyForcing(rows);
}

std::size_t MonthlyForcing::month_at(double t, std::size_t start_month) {
  const auto k = static_cast<long long>(std::floor(t / kSecondsPerMonth + 1e-12));
  return static_cast<std::size_t>((static_cast<long long>(start_month) + k) % 12);
}

double MonthlyForcing::total_flux_at(double t, std::size_t start_month) const {
  return rows_[month_at(t, start_month)].total();
}

SurfaceSolution solve_surface(double f_a, double k, double t1, double t2, double dx, const SeaIceParams& p) {
  const double a = f_a - p.i0 + k * (4.0 * t1 - t2) / (2.0 * dx);
  const double b = 3.0 * k / (2.0 * dx);
  auto f = [&](double t) { return a - p.sigma * pow4(t + kKelvinOffset) - b * t; };
  auto df = [&](double t) {
    const double u = t + kKelvinOffset;
    return -4.0 * p.sigma * u * u * u - b;
  };

  SurfaceSolution out;
  double t = std::clamp(t1, kSurfaceLow, kSurfaceHigh);
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    const double step = f(t) / df(t);
    t -= step;
    if (std::abs(step) < 1e-12 * std::max(1.0, std::abs(t))) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(t)) {
    double lo = kSurfaceLow, hi = kSurfaceHigh;
    if (f(lo) < 0.0 || f(hi) > 0.0) throw NumericalFailure("surface energy balance has no root in [-60, 0] C");
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) > 0.0 ? lo : hi) = mid;
    }
    t = 0.5 * (lo + hi);
  }
  if (t > p.t_m1) {
    out.temperature = p.t_m1;
    out.clamped = true;
    out.residual = f(p.t_m1);
    out.melt_rate = std::max(out.residual, 0.0) / p.q_latent;
  } else {
    out.temperature = t;
    out.residual = f(t);
  }
  return out;
}

SurfaceStep surface_step(const SeaIceState& s, double f_a, const SeaIceParams& p) {
  SurfaceSolution sol;
  if (s.snow_active) {
    if (!(s.h > 0.0)) throw InvalidArgument("surface_step needs positive snow depth");
    sol = solve_surface(f_a, p.k_s, s.t_snow[1], s.t_snow[2], s.h / static_cast<double>(s.t_snow.size() - 1), p);
  } else {
    sol = solve_surface(f_a, p.k0, s.t_ice[1], s.t_ice[2], s.H / static_cast<double>(s.t_ice.size() - 1), p);
  }
  return {sol.temperature, -sol.melt_rate};
}

SeaIceDerivatives seaice_rhs(const SeaIceState& state, double f_a, double accumulation, const SeaIceParams& params,
                             bool salinity_on) {
  check_state(state);
  const Layout L{state.t_snow.size(), state.t_ice.size()};
  const auto sal = salinity_profile(L.ni, params.salinity);
  PlantContext ctx{params, L, sal, salinity_on, state.snow_active, f_a, accumulation, {}, {}};
  const auto y = pack(state);
  std::vector<double> dy(L.size());
  const auto r = plant_rhs(ctx, y.data(), dy.data());
  SeaIceDerivatives d;
  d.d_snow.assign(dy.begin(), dy.begin() + static_cast<std::ptrdiff_t>(L.ns));
  d.d_ice.assign(dy.begin() + static_cast<std::ptrdiff_t>(L.ns), dy.begin() + static_cast<std::ptrdiff_t>(L.ns + L.ni));
  d.dh = dy[L.h()];
  d.dH = dy[L.H()];
  d.top_rate = r.top_rate;
  d.bottom_rate = r.bottom_rate;
  d.surface_temperature = r.surface;
  d.interface_temperature = r.interface;
  return d;
}

void apply_constraints(SeaIceState& s, double f_a, const SeaIceParams& p) {
  check_state(s);
  const Layout L{s.t_snow.size(), s.t_ice.size()};
  const auto y = pack(s);
  std::vector<double> ts, ti;
  resolve_nodes(y.data(), L, s.snow_active, f_a, p, ts, ti);
  s.t_ice = ti;
  if (s.snow_active) s.t_snow = ts;
}

double initial_top_temperature(const SeaIceParams& p, double f_a, double H0, double h0) {
  auto balance = [&](double t0) {
    const double grad_ice = (p.t_m2 - t0) / H0;
    if (h0 > 0.0) {
      const double g = p.k0 * grad_ice / p.k_s;
      const double t_surf = t0 - g * h0;
      return f_a - p.i0 - p.sigma * pow4(t_surf + kKelvinOffset) + p.k_s * g;
    }
    return f_a - p.i0 - p.sigma * pow4(t0 + kKelvinOffset) + p.k0 * grad_ice;
  };
  double lo = kSurfaceLow, hi = p.t_m2;
  if (balance(hi) >= 0.0) return hi;
  if (balance(lo) <= 0.0) throw NumericalFailure("initial surface balance has no root above -60 C");
  for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
    const double mid = 0.5 * (lo + hi);
    (balance(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

SeaIceState initial_state(const SeaIceParams& p, const MonthlyForcing& forcing, std::size_t start_month, double H0,
                          double h0, double amplitude, const SeaIceOptions& o) {
  p.validate();
  if (!(H0 > 0.0) || h0 < 0.0) throw InvalidArgument("initial thicknesses must satisfy H0 > 0, h0 >= 0");
  if (o.n_ice < 4 || o.n_snow < 4) throw InvalidArgument("grids need at least 4 nodes");
  const double f_a = forcing.month(start_month).total();
  const bool snow = h0 >= o.h_min;
  const double t0 = initial_top_temperature(p, f_a, H0, snow ? h0 : 0.0);
  SeaIceState s;
  s.H = H0;
  s.h = snow ? h0 : 0.0;
  s.snow_active = snow;
  s.t_ice.resize(o.n_ice);
  for (std::size_t i = 0; i < o.n_ice; ++i) {
    const double xi = static_cast<double>(i) / static_cast<double>(o.n_ice - 1);
    s.t_ice[i] = (p.t_m2 - t0) * xi + t0 + amplitude * std::sin(4.0 * std::numbers::pi * xi);
  }
  s.t_snow.resize(o.n_snow);
  const double g = p.k0 * (p.t_m2 - t0) / (p.k_s * H0);
  for (std::size_t j = 0; j < o.n_snow; ++j) {
    const double eta = static_cast<double>(j) / static_cast<double>(o.n_snow - 1);
    s.t_snow[j] = t0 + g * (-s.h * (1.0 - eta));
  }
  apply_constraints(s, f_a, p);
  return s;
}

double stable_step(const SeaIceState& s, const SeaIceParams& p, double safety) {
  const double dxi = 1.0 / static_cast<double>(s.t_ice.size() - 1);
  double h = numerics::diffusion_step_bound(dxi, p.diffusivity() / (s.H * s.H), safety);
  if (s.snow_active) {
    const double deta = 1.0 / static_cast<double>(s.t_snow.size() - 1);
    h = std::min(h, numerics::diffusion_step_bound(deta, p.snow_diffusivity() / (s.h * s.h), safety));
  }
  return h;
}

double AnnualSummary::periodicity(std::size_t spinup_years) const {
  double worst = 0.0;
  bool any = false;
  for (std::size_t y = std::max<std::size_t>(spinup_years, 1); y < max_thickness.size(); ++y) {
    worst = std::max(worst, std::abs(max_thickness[y] - max_thickness[y - 1]) / max_thickness[y - 1]);
    any = true;
  }
  return any ? worst : std::numeric_limits<double>::quiet_NaN();
}

SeaIceTrajectory simulate_annual(const SeaIceParams& p, const MonthlyForcing& forcing, const SeaIceState& init,
                                 std::size_t years, const SeaIceOptions& o, std::size_t start_month) {
  p.validate();
  check_state(init);
  const Layout L{init.t_snow.size(), init.t_ice.size()};
  const auto sal = salinity_profile(L.ni, p.salinity);
  SeaIceState s = init;
  PlantContext ctx{p, L, sal, o.salinity_on, s.snow_active, 0.0, 0.0, {}, {}};
  std::vector<double> y = pack(s);
  numerics::Rk4Stepper stepper(L.size());
  auto rhs = [&](double, const std::vector<double>& yy, std::vector<double>& dy) { plant_rhs(ctx, yy.data(), dy.data()); };

  SeaIceTrajectory traj;
  const double t0 = s.time;
  const double t_end = t0 + static_cast<double>(years) * 12.0 * kSecondsPerMonth;
  traj.states.push_back(s);
  double next_out = t0 + o.output_dt;
  const double year_len = 12.0 * kSecondsPerMonth;

  auto track = [&](double t, double H) {
    const auto year = static_cast<std::size_t>(std::floor((t - t0) / year_len - 1e-9));
    auto& a = traj.annual;
    while (a.max_thickness.size() <= year) {
      a.max_thickness.push_back(-std::numeric_limits<double>::infinity());
      a.min_thickness.push_back(std::numeric_limits<double>::infinity());
      a.month_of_max.push_back(0);
      a.month_of_min.push_back(0);
    }
    const std::size_t month = MonthlyForcing::month_at(std::max(t - t0 - 1e-6, 0.0), start_month);
    if (H > a.max_thickness[year]) {
      a.max_thickness[year] = H;
      a.month_of_max[year] = month;
    }
    if (H < a.min_thickness[year]) {
      a.min_thickness[year] = H;
      a.month_of_min[year] = month;
    }
  };

  double t = t0;
  while (t < t_end - 1e-6) {
    const double rel = t - t0;
    const std::size_t month = MonthlyForcing::month_at(rel, start_month);
    ctx.f_a = forcing.month(month).total();
    ctx.accumulation = forcing.accumulation[month];
    ctx.snow_active = s.snow_active;
    const double month_end = t0 + (std::floor(rel / kSecondsPerMonth + 1e-12) + 1.0) * kSecondsPerMonth;
    double h = std::min(stable_step(s, p, o.safety), o.max_step);
    const double target = std::min({month_end, next_out, t_end});
    bool hit = false;
    if (t + h >= target - 1e-9) {
      h = target - t;
      hit = true;
    }
    stepper.step(rhs, t, y, h);
    t = hit ? target : t + h;
    unpack(y, L, s);
    s.time = t;
    const double rel_after = t - t0;
    const double f_next = forcing.month(MonthlyForcing::month_at(rel_after, start_month)).total();
    update_layers(s, f_next, p, o);
    if (!(s.H > o.H_min)) {
      traj.states.push_back(s);
      throw ValidityHalt("ice thickness fell below " + std::to_string(o.H_min) + " m at day " +
                         std::to_string(rel_after / kSecondsPerDay));
    }
    y = pack(s);
    track(t, s.H);
    if (std::abs(t - next_out) < 1e-6 || t >= t_end - 1e-6) {
      traj.states.push_back(s);
      if (std::abs(t - next_out) < 1e-6) next_out += o.output_dt;
    }
  }
  return traj;
}

void SeaIceObserverParams::validate() const {
  if (open_loop) return;
  if (!(lambda > 0.0 && c > 0.0 && epsilon > 0.0 && M > 0.0 && H_bar > 0.0)) {
    throw InvalidArgument("sea-ice observer parameters must be positive");
  }
  if (!(1.0 + delta1 > 0.0 && 1.0 + delta2 > 0.0)) throw InvalidArgument("perturbations must keep D and beta positive");
}

bool SeaIceObserverParams::c_condition_plausible() const { return c > lambda && c > M / H_bar; }

double gain_p1(double x, double H, const SeaIceObserverParams& o, double D, double beta) {
  if (!(H > 0.0)) throw InvalidArgument("gain_p1: thickness must be positive");
  if (x < -1e-12 * H || x > H * (1.0 + 1e-12)) throw InvalidArgument("gain_p1: x outside [0, H]");
  if (o.open_loop) return 0.0;
  x = std::clamp(x, 0.0, H);
  const double lam = o.lambda;
  const double z = std::sqrt(std::max(lam / D * (H * H - x * x), 0.0));
  return o.c * lam * x / beta * numerics::bessel_ratio_i(1, z) +
         (o.epsilon * H / D - 3.0 / beta) * lam * lam * x * numerics::bessel_ratio_i(2, z) +
         lam * lam * lam * x * x * x / (D * beta) * numerics::bessel_ratio_i(3, z);
}

SeaIceGains observer_gains(double H, const SeaIceObserverParams& o, const SeaIceParams& p, std::size_t n) {
  if (!(H > 0.0)) throw InvalidArgument("observer_gains: thickness must be positive");
  if (n < 2) throw InvalidArgument("observer_gains: need at least 2 nodes");
  SeaIceGains g;
  g.p1.assign(n, 0.0);
  if (o.open_loop) return g;
  const double D = p.diffusivity() * (1.0 + o.delta1);
  const double beta = p.beta() * (1.0 + o.delta2);
  const double lam = o.lambda;
  for (std::size_t i = 0; i < n; ++i) g.p1[i] = gain_p1(H * static_cast<double>(i) / static_cast<double>(n - 1), H, o, D, beta);
  g.p2 = 0.0;
  g.p3 = -lam * H / (2.0 * beta) - o.epsilon;
  g.p4 = o.c - 0.5 * lam * (1.0 - lam * H * H / (8.0 * D)) + beta * lam / (2.0 * D) * o.epsilon * H;
  return g;
}

void apply_observer_boundaries(SeaIceObserverState& obs, double y1, double y2, const SeaIceGains& g,
                               const SeaIceParams& p) {
  const double err = y1 - obs.H_hat;
  obs.t_hat.front() = y2 - g.p2 * err;
  obs.t_hat.back() = p.t_m2 - g.p3 * err;
}

SeaIceObserverDerivatives observer_rhs(const SeaIceObserverState& obs, double y1, double y2, double top_rate,
                                       double bottom_rate, const SeaIceGains& g, const SeaIceObserverParams& o,
                                       const SeaIceParams& p) {
  if (!(obs.H_hat > 0.0)) throw ValidityHalt("estimated thickness collapsed");
  if (!(y1 > 0.0) || !std::isfinite(y2)) throw InvalidArgument("invalid sea-ice measurements");
  const std::size_t n = obs.t_hat.size();
  if (n < 3 || g.p1.size() != n) throw InvalidArgument("observer grid and gain profile mismatch");
  const double err = y1 - obs.H_hat;
  std::vector<double> t(obs.t_hat);
  t.front() = y2 - g.p2 * err;
  t.back() = p.t_m2 - g.p3 * err;

  const double D = p.diffusivity() * (1.0 + o.delta1);
  const double beta = p.beta() * (1.0 + o.delta2);
  const double f_w = p.f_w * (1.0 + o.delta3);
  const double source_scale = p.i0 / (p.rho * p.c0);
  const double dxi = 1.0 / static_cast<double>(n - 1);

  SeaIceObserverDerivatives d;
  d.d_t.assign(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double xi = static_cast<double>(i) * dxi;
    const double x = xi * y1;
    const double t_xx = (t[i + 1] - 2.0 * t[i] + t[i - 1]) / (dxi * dxi * y1 * y1);
    const double t_x = (t[i + 1] - t[i - 1]) / (2.0 * dxi * y1);
    const double speed = top_rate * (1.0 - xi) + bottom_rate * xi;
    d.d_t[i] = D * t_xx + source_scale * p.kappa_i * std::exp(-p.kappa_i * x) - g.p1[i] * err + t_x * speed;
  }
  const double grad_bottom = (3.0 * t[n - 1] - 4.0 * t[n - 2] + t[n - 3]) / (2.0 * dxi * y1);
  d.dH_hat = g.p4 * err + beta * grad_bottom - f_w / p.q_latent;
  return d;
}

std::vector<double> estimate_initial_profile(double T0, double H0, double t_melt, double d, std::size_t n) {
  if (!(d >= 0.0 && d < 0.5)) throw InvalidArgument("estimate shape parameter d must lie in [0, 1/2)");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = H0 * static_cast<double>(i) / static_cast<double>(n - 1);
    out[i] = (t_melt - T0) / (H0 * H0 * (1.0 - 2.0 * d)) * (x * x - 2.0 * d * H0 * x) + T0;
  }
  out.back() = t_melt;
  return out;
}

SeaIceEstimationRun run_seaice_estimation(const SeaIceEstimationConfig& cfg) {
  const auto& p = cfg.params;
  const auto& o = cfg.options;
  p.validate();
  cfg.observer.validate();
  SeaIceState s = initial_state(p, cfg.forcing, cfg.start_month, cfg.H0, cfg.h0, cfg.amplitude, o);
  const Layout L{s.t_snow.size(), s.t_ice.size()};
  const std::size_t n = L.ni;
  const auto sal = salinity_profile(n, p.salinity);

  SeaIceObserverState obs;
  obs.H_hat = cfg.H0;
  obs.t_hat = estimate_initial_profile(s.t_ice.front(), cfg.H0, p.t_m2, cfg.d, n);

  PlantContext ctx{p, L, sal, o.salinity_on, s.snow_active, 0.0, 0.0, {}, {}};
  const std::size_t i_obs = L.size();
  const std::size_t i_hhat = i_obs + n;
  std::vector<double> y = pack(s);
  y.insert(y.end(), obs.t_hat.begin(), obs.t_hat.end());
  y.push_back(obs.H_hat);

  SeaIceObserverState scratch;
  scratch.t_hat.resize(n);
  auto rhs = [&](double, const std::vector<double>& yy, std::vector<double>& dy) {
    const auto r = plant_rhs(ctx, yy.data(), dy.data());
    const double y1 = yy[L.H()];
    const double y2 = ctx.ti.front();
    const auto gains = observer_gains(y1, cfg.observer, p, n);
    std::copy(yy.begin() + static_cast<std::ptrdiff_t>(i_obs), yy.begin() + static_cast<std::ptrdiff_t>(i_hhat),
              scratch.t_hat.begin());
    scratch.H_hat = yy[i_hhat];
    const auto d = observer_rhs(scratch, y1, y2, r.top_rate, r.bottom_rate, gains, cfg.observer, p);
    std::copy(d.d_t.begin(), d.d_t.end(), dy.begin() + static_cast<std::ptrdiff_t>(i_obs));
    dy[i_hhat] = d.dH_hat;
  };

  SeaIceEstimationRun run;
  auto record = [&](double t) {
    SeaIceEstimationSample smp;
    smp.time = t;
    smp.H = s.H;
    smp.H_hat = y[i_hhat];
    smp.surface_temperature = s.surface_temperature();
    std::vector<double> e2(n);
    double over = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      const double e = y[i_obs + i] - s.t_ice[i];
      e2[i] = e * e;
      over = std::max(over, e);
    }
    smp.l2_error = std::sqrt(numerics::integrate_trapezoid(e2, s.H / static_cast<double>(n - 1)));
    smp.max_overshoot = std::max(over, 0.0);
    std::span<const double> est(y.data() + i_obs, n);
    for (std::size_t k = 0; k < kIceProbes.size(); ++k) {
      smp.probe_true[k] = numerics::interpolate_uniform(s.t_ice, kIceProbes[k]);
      smp.probe_est[k] = numerics::interpolate_uniform(est, kIceProbes[k]);
    }
    run.samples.push_back(smp);
  };

  auto enforce_observer = [&]() {
    const auto gains = observer_gains(s.H, cfg.observer, p, n);
    SeaIceObserverState view;
    view.H_hat = y[i_hhat];
    view.t_hat.assign(y.begin() + static_cast<std::ptrdiff_t>(i_obs), y.begin() + static_cast<std::ptrdiff_t>(i_hhat));
    apply_observer_boundaries(view, s.H, s.t_ice.front(), gains, p);
    y[i_obs] = view.t_hat.front();
    y[i_hhat - 1] = view.t_hat.back();
  };

  numerics::Rk4Stepper stepper(y.size());
  double t = 0.0;
  enforce_observer();
  record(t);
  double next_out = cfg.output_dt;
  while (t < cfg.t_end - 1e-6) {
    const std::size_t month = MonthlyForcing::month_at(t, cfg.start_month);
    ctx.f_a = cfg.forcing.month(month).total();
    ctx.accumulation = cfg.forcing.accumulation[month];
    ctx.snow_active = s.snow_active;
    const double month_end = (std::floor(t / kSecondsPerMonth + 1e-12) + 1.0) * kSecondsPerMonth;
    double h = std::min(stable_step(s, p, o.safety), o.max_step);
    const double target = std::min({month_end, next_out, cfg.t_end});
    bool hit = false;
    if (t + h >= target - 1e-9) {
      h = target - t;
      hit = true;
    }
    stepper.step(rhs, t, y, h);
    t = hit ? target : t + h;
    std::vector<double> plant(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(L.size()));
    unpack(plant, L, s);
    s.time = t;
    update_layers(s, cfg.forcing.total_flux_at(t, cfg.start_month), p, o);
    if (!(s.H > o.H_min)) throw ValidityHalt("ice thickness collapsed during estimation");
    if (!(y[i_hhat] > 0.0)) throw ValidityHalt("estimated thickness collapsed");
    const auto packed = pack(s);
    std::copy(packed.begin(), packed.end(), y.begin());
    enforce_observer();
    if (std::abs(t - next_out) < 1e-6) {
      record(t);
      next_out += cfg.output_dt;
    } else if (t >= cfg.t_end - 1e-6) {
      record(t);
    }
  }
  return run;
}

RobustnessMetrics robustness_metrics(const SeaIceEstimationRun& run, double band_fraction, double from_day) {
  RobustnessMetrics m;
  if (run.samples.empty()) throw InvalidArgument("robustness_metrics: empty run");
  m.initial_profile_error = run.samples.front().l2_error;
  for (const auto& s : run.samples) m.peak_thickness_error = std::max(m.peak_thickness_error, std::abs(s.H - s.H_hat));
  m.band = band_fraction * m.initial_profile_error;
  m.settle_day = std::numeric_limits<double>::infinity();
  for (std::size_t i = run.samples.size(); i-- > 0;) {
    if (std::abs(run.samples[i].H - run.samples[i].H_hat) > m.band) break;
    m.settle_day = run.samples[i].time / kSecondsPerDay;
  }
  for (const auto& s : run.samples) {
    if (s.time < from_day * kSecondsPerDay) continue;
    m.tail_thickness_error = std::max(m.tail_thickness_error, std::abs(s.H - s.H_hat));
    m.tail_profile_error = std::max(m.tail_profile_error, s.l2_error);
  }
  return m;
}

SeaIceEstimationRun robustness_run(SeaIceEstimationConfig config, double delta1, double delta2, double delta3) {
  config.observer.delta1 = delta1;
  config.observer.delta2 = delta2;
  config.observer.delta3 = delta3;
  return run_seaice_estimation(config);
}

}  // namespace phasest::seaice
