#include "phasest/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "phasest/battery.hpp"
#include "phasest/metrics.hpp"
#include "phasest/numerics.hpp"
#include "phasest/observers.hpp"
#include "phasest/seaice.hpp"
#include "phasest/stefan.hpp"

namespace phasest::runner {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::pair<Model, std::string>> kModelNames{
    {Model::Stefan, "stefan"}, {Model::SeaIce, "seaice"}, {Model::Battery, "battery"}};
const std::vector<std::pair<Mode, std::string>> kModeNames{
    {Mode::Simulate, "simulate"},       {Mode::ObserveFull, "observe-full"},
    {Mode::ObserveJoint, "observe-joint"}, {Mode::ObserveBaseline, "observe-baseline"},
    {Mode::ObserveOpenLoop, "observe-openloop"}, {Mode::Ekf, "ekf"},
    {Mode::Robustness, "robustness"}};

std::set<Mode> supported_modes(Model m) {
  switch (m) {
    case Model::Stefan:
      return {Mode::Simulate, Mode::ObserveFull, Mode::ObserveJoint, Mode::ObserveBaseline, Mode::ObserveOpenLoop};
    case Model::SeaIce:
      return {Mode::Simulate, Mode::ObserveJoint, Mode::ObserveOpenLoop, Mode::Robustness};
    case Model::Battery:
      return {Mode::Simulate, Mode::ObserveJoint, Mode::Ekf};
  }
  return {};
}

// Defaults taken from the published experiments; everything else is ours.
std::set<std::string> published_keys(Model m) {
  switch (m) {
    case Model::Stefan:
      return {};
    case Model::SeaIce:
      return {"params.rho_s",  "params.k_s",        "params.rho",       "params.c0",         "params.k0",
              "params.gamma1_kj", "params.gamma2",  "params.i0",        "params.kappa_i",    "params.t_m1",
              "params.t_m2",   "params.sigma",      "params.q_latent",  "params.f_w",        "params.salinity_A",
              "params.salinity_n", "params.salinity_m", "params.forcing_csv", "gains.lambda", "gains.c",
              "gains.epsilon", "gains.M",           "gains.H_bar",      "initial.H0",        "initial.h0",
              "initial.d"};
    case Model::Battery:
      return {"params.params_file", "initial.soc0", "initial.soc_hat0", "initial.c_rate"};
  }
  return {};
}

json common_defaults() {
  return {{"name", ""},  {"model", ""},  {"mode", "simulate"}, {"seed", 0},
          {"noise_std", 0.0}, {"strict_validity", false}};
}

void tag_leaves(const json& values, json& prov, const std::string& prefix, const std::set<std::string>& published) {
  for (auto it = values.begin(); it != values.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      prov[it.key()] = json::object();
      tag_leaves(*it, prov[it.key()], path, published);
    } else {
      prov[it.key()] = published.count(path) ? "published" : "chosen";
    }
  }
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

void merge_into(json& values, json& prov, const json& overrides, const std::string& tag, const std::string& prefix) {
  if (!overrides.is_object()) throw InvalidArgument("config: " + (prefix.empty() ? "document" : prefix) + " must be an object");
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!values.contains(it.key())) throw InvalidArgument("config: unknown key '" + path + "'");
    auto& slot = values[it.key()];
    if (slot.is_object()) {
      merge_into(slot, prov[it.key()], *it, tag, path);
      continue;
    }
    if (!same_kind(slot, *it)) {
      throw InvalidArgument("config: '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                            it->type_name());
    }
    slot = *it;
    prov[it.key()] = tag;
  }
}

double num(const json& v, const char* key) { return v.at(key).get<double>(); }

std::size_t count(const json& v, const char* key) {
  const double d = v.at(key).get<double>();
  if (!(d >= 0.0) || d != std::floor(d)) throw InvalidArgument(std::string("config: '") + key + "' must be a nonnegative integer");
  return static_cast<std::size_t>(d);
}

std::string resolve_asset(const std::string& path) {
  if (path.empty()) return path;
  if (std::filesystem::exists(path)) return path;
  const auto in_assets = std::filesystem::path(PHASEST_ASSET_DIR) / path;
  if (std::filesystem::exists(in_assets)) return in_assets.string();
  throw InvalidArgument("config: asset '" + path + "' not found");
}

// ---- model builders ----

stefan::HeatInput stefan_input(const json& params) {
  const auto& segs = params.at("heat_input");
  if (segs.empty()) return stefan::HeatInput::constant(num(params, "q_c"));
  std::vector<stefan::HeatInput::Segment> out;
  for (const auto& s : segs) {
    if (!s.is_array() || s.size() != 2 || !s[0].is_number() || !s[1].is_number()) {
      throw InvalidArgument("config: 'params.heat_input' entries must be [t_start, value]");
    }
    out.push_back({s[0].get<double>(), s[1].get<double>()});
  }
  return stefan::HeatInput(std::move(out));
}

stefan::StefanParams stefan_params(const json& p) {
  stefan::StefanParams sp;
  sp.k = num(p, "k");
  sp.rho = num(p, "rho");
  sp.cp = num(p, "cp");
  sp.latent = num(p, "latent");
  sp.t_melt = num(p, "t_melt");
  sp.domain_length = num(p, "domain_length");
  sp.validate();
  return sp;
}

observers::StefanEstimationScenario stefan_scenario(const ScenarioConfig& c) {
  const auto& v = c.values;
  observers::StefanEstimationScenario sc;
  sc.params = stefan_params(v.at("params"));
  sc.input = stefan_input(v.at("params"));
  sc.n_points = count(v.at("grid"), "n_points");
  sc.safety = num(v.at("grid"), "safety");
  const auto& in = v.at("initial");
  sc.s0 = num(in, "s0");
  sc.plant_bump = num(in, "plant_bump");
  sc.s_hat0 = num(in, "s_hat0");
  sc.observer_bump = num(in, "observer_bump");
  sc.observer_q0 = num(in, "observer_q0");
  sc.lambda = num(v.at("gains"), "lambda");
  sc.l_gain = num(v.at("gains"), "l_gain");
  sc.t_end = num(v, "t_end");
  sc.output_dt = num(v, "output_dt");
  switch (c.mode) {
    case Mode::ObserveFull: sc.mode = observers::StefanObserverMode::Full; break;
    case Mode::ObserveJoint: sc.mode = observers::StefanObserverMode::Joint; break;
    case Mode::ObserveBaseline: sc.mode = observers::StefanObserverMode::Baseline; break;
    default: sc.mode = observers::StefanObserverMode::OpenLoop; break;
  }
  return sc;
}

seaice::SeaIceEstimationConfig seaice_config(const ScenarioConfig& c) {
  const auto& v = c.values;
  const auto& p = v.at("params");
  seaice::SeaIceEstimationConfig cfg;
  auto& sp = cfg.params;
  sp.rho_s = num(p, "rho_s");
  sp.k_s = num(p, "k_s");
  sp.rho = num(p, "rho");
  sp.c0 = num(p, "c0");
  sp.k0 = num(p, "k0");
  sp.gamma1_kj = num(p, "gamma1_kj");
  sp.gamma2 = num(p, "gamma2");
  sp.i0 = num(p, "i0");
  sp.kappa_i = num(p, "kappa_i");
  sp.t_m1 = num(p, "t_m1");
  sp.t_m2 = num(p, "t_m2");
  sp.sigma = num(p, "sigma");
  sp.q_latent = num(p, "q_latent");
  sp.f_w = num(p, "f_w");
  sp.salinity = {num(p, "salinity_A"), num(p, "salinity_n"), num(p, "salinity_m")};
  sp.validate();
  const auto forcing = p.at("forcing_csv").get<std::string>();
  cfg.forcing = forcing.empty() ? seaice::MonthlyForcing::table1()
                                : seaice::MonthlyForcing::load_csv(resolve_asset(forcing));
  const auto& g = v.at("gains");
  cfg.observer.lambda = num(g, "lambda");
  cfg.observer.c = num(g, "c");
  cfg.observer.epsilon = num(g, "epsilon");
  cfg.observer.M = num(g, "M");
  cfg.observer.H_bar = num(g, "H_bar");
  cfg.observer.delta1 = num(g, "delta1");
  cfg.observer.delta2 = num(g, "delta2");
  cfg.observer.delta3 = num(g, "delta3");
  cfg.observer.open_loop = c.mode == Mode::ObserveOpenLoop;
  const auto& gr = v.at("grid");
  cfg.options.n_ice = count(gr, "n_ice");
  cfg.options.n_snow = count(gr, "n_snow");
  cfg.options.safety = num(gr, "safety");
  cfg.options.max_step = num(gr, "max_step");
  cfg.options.h_min = num(gr, "h_min");
  cfg.options.salinity_on = gr.at("salinity_on").get<bool>();
  const auto& in = v.at("initial");
  cfg.H0 = num(in, "H0");
  cfg.h0 = num(in, "h0");
  cfg.amplitude = num(in, "amplitude");
  cfg.d = num(in, "d");
  cfg.start_month = count(in, "start_month");
  if (cfg.start_month > 11) throw InvalidArgument("config: 'initial.start_month' must lie in 0..11");
  cfg.t_end = num(v, "t_end");
  cfg.output_dt = num(v, "output_dt");
  cfg.options.output_dt = cfg.output_dt;
  return cfg;
}

battery::BatteryScenario battery_scenario(const ScenarioConfig& c) {
  const auto& v = c.values;
  const auto& p = v.at("params");
  battery::BatteryScenario sc;
  const auto file = p.at("params_file").get<std::string>();
  sc.params = file.empty() ? battery::CellParams::lfp_reference() : battery::CellParams::load_json(resolve_asset(file));
  sc.params.contact_resistance = p.at("contact_resistance").get<bool>();
  const auto& g = v.at("gains");
  sc.observer.lambda = num(g, "lambda");
  sc.observer.kappa = num(g, "kappa");
  sc.observer.ekf_p0_conc = num(g, "ekf_p0_conc");
  sc.observer.ekf_p0_radius = num(g, "ekf_p0_radius");
  sc.observer.ekf_q_conc = num(g, "ekf_q_conc");
  sc.observer.ekf_q_radius = num(g, "ekf_q_radius");
  sc.observer.ekf_r_meas = num(g, "ekf_r_meas");
  const auto& gr = v.at("grid");
  sc.n_shell = count(gr, "n_shell");
  sc.n_neg = count(gr, "n_neg");
  sc.n_ekf = count(gr, "n_ekf");
  sc.safety = num(gr, "safety");
  sc.meas_dt = num(gr, "meas_dt");
  const auto& in = v.at("initial");
  sc.soc0 = num(in, "soc0");
  sc.soc_hat0 = num(in, "soc_hat0");
  sc.rp0_fraction = num(in, "rp0_fraction");
  sc.c_rate = num(in, "c_rate");
  sc.pin_interface = in.at("pin_interface").get<bool>();
  sc.t_end = num(v, "t_end");
  sc.output_dt = num(v, "output_dt");
  sc.noise_std = num(v, "noise_std");
  sc.seed = c.seed();
  sc.run_ekf = c.mode == Mode::Ekf;
  return sc;
}

// ---- runs ----

const std::vector<std::string> kStefanSimColumns{"time", "s", "T0", "stored_energy", "energy_residual", "min_excess",
                                                 "valid"};
const std::vector<std::string> kStefanObsColumns{
    "time",        "s",           "s_hat",       "l2_error",   "h1_error",   "probe0_true", "probe1_true",
    "probe2_true", "probe3_true", "probe0_est",  "probe1_est", "probe2_est", "probe3_est",  "plant_valid"};
const std::vector<std::string> kSeaIceSimColumns{"time", "H", "h", "surface_temperature", "snow_active"};
const std::vector<std::string> kSeaIceObsColumns{
    "time",        "H",           "H_hat",       "l2_error",   "max_overshoot", "surface_temperature",
    "probe0_true", "probe1_true", "probe2_true", "probe3_true", "probe0_est",   "probe1_est",
    "probe2_est",  "probe3_est"};
const std::vector<std::string> kBatteryColumns{
    "time",     "r_p",       "r_hat",      "r_ekf",      "soc_true",     "soc_bks",        "soc_ekf",
    "pos_avg_true", "pos_avg_bks", "c_ss_true", "c_ss_meas", "c_ss_bks", "voltage", "n_li_plant",
    "n_li_observer", "weighted_error"};

void run_stefan(const ScenarioConfig& c, RunResult& r) {
  auto sc = stefan_scenario(c);
  if (c.mode == Mode::Simulate) {
    r.records.columns = kStefanSimColumns;
    const double q0 = sc.input(0.0);
    const auto theta0 = stefan::compatible_profile(sc.params, sc.s0, q0, sc.plant_bump, sc.n_points);
    stefan::SimulationOptions opt;
    opt.safety = sc.safety;
    opt.strict_validity = c.strict_validity();
    const double dxi = 1.0 / static_cast<double>(sc.n_points - 1);
    const double h0 = numerics::diffusion_step_bound(dxi, sc.params.alpha() / (sc.s0 * sc.s0), sc.safety);
    opt.output_stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(sc.output_dt / h0)));
    const auto traj = stefan::simulate(sc.params, sc.input, sc.s0, theta0, sc.t_end, opt);
    const auto resid = stefan::energy_balance(traj, sc.input, sc.params);
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const auto& st = traj[k];
      const auto diag = stefan::validate_state(st, sc.params);
      r.records.rows.push_back({st.time, st.s, st.theta.front(), stefan::stored_energy(st, sc.params), resid[k],
                                diag.min_excess, st.valid ? 1.0 : 0.0});
    }
    return;
  }
  r.records.columns = kStefanObsColumns;
  const auto run = observers::run_stefan_estimation(sc);
  for (const auto& s : run.samples) {
    r.records.rows.push_back({s.time, s.s, s.s_hat, s.norms.l2, s.norms.h1, s.probe_true[0], s.probe_true[1],
                              s.probe_true[2], s.probe_true[3], s.probe_est[0], s.probe_est[1], s.probe_est[2],
                              s.probe_est[3], s.plant_valid ? 1.0 : 0.0});
    if (c.strict_validity() && !s.plant_valid && r.status == Status::Ok) {
      r.status = Status::ValidityHalt;
      r.halt_reason = "plant state invalid at t = " + std::to_string(s.time);
    }
  }
  if (run.halted) {
    r.status = run.numerical_failure ? Status::NumericalFailure : Status::ValidityHalt;
    r.halt_reason = run.halt_reason;
  }
  if (r.status == Status::ValidityHalt && c.strict_validity()) {
    // drop samples past the first invalid one
    auto& rows = r.records.rows;
    const std::size_t col = 13;
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& row) { return row[col] == 0.0; });
    if (it != rows.end()) rows.erase(std::next(it), rows.end());
  }
}

void run_seaice(const ScenarioConfig& c, RunResult& r) {
  auto cfg = seaice_config(c);
  if (c.mode == Mode::Simulate) {
    r.records.columns = kSeaIceSimColumns;
    const auto years = count(c.values, "years");
    const auto init = seaice::initial_state(cfg.params, cfg.forcing, cfg.start_month, cfg.H0, cfg.h0, cfg.amplitude,
                                            cfg.options);
    const auto traj = seaice::simulate_annual(cfg.params, cfg.forcing, init, years, cfg.options, cfg.start_month);
    for (const auto& s : traj.states) {
      r.records.rows.push_back({s.time, s.H, s.h, s.surface_temperature(), s.snow_active ? 1.0 : 0.0});
    }
    return;
  }
  r.records.columns = kSeaIceObsColumns;
  const auto run = seaice::run_seaice_estimation(cfg);
  for (const auto& s : run.samples) {
    r.records.rows.push_back({s.time, s.H, s.H_hat, s.l2_error, s.max_overshoot, s.surface_temperature,
                              s.probe_true[0], s.probe_true[1], s.probe_true[2], s.probe_true[3], s.probe_est[0],
                              s.probe_est[1], s.probe_est[2], s.probe_est[3]});
  }
}

void run_battery(const ScenarioConfig& c, RunResult& r) {
  const auto sc = battery_scenario(c);
  r.records.columns = kBatteryColumns;
  const auto run = c.mode == Mode::Simulate ? battery::run_discharge(sc) : battery::run_estimation(sc);
  const double R = sc.params.pos.R_p;
  for (const auto& s : run.samples) {
    r.records.rows.push_back({s.time, s.r_p / R, s.r_hat / R, s.r_ekf / R, s.soc_true, s.soc_bks, s.soc_ekf,
                              s.pos_avg_true, s.pos_avg_bks, s.c_ss_true, s.c_ss_meas, s.c_ss_bks, s.voltage,
                              s.n_li_plant, s.n_li_observer, s.weighted_error});
  }
  if (run.halted) {
    r.status = run.numerical_failure ? Status::NumericalFailure : Status::ValidityHalt;
    r.halt_reason = run.halt_reason;
  }
}

// ---- metrics ----

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::vector<double> abs_diff(const Table& t, const std::string& a, const std::string& b) {
  const auto x = t.values(a), y = t.values(b);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::abs(x[i] - y[i]);
  return out;
}

double max_drift(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double worst = 0.0;
  for (double x : v) worst = std::max(worst, std::abs(x - v.front()) / std::abs(v.front()));
  return worst;
}

double value_at(const std::vector<double>& times, const std::vector<double>& v, double t) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(times[i] - t) < 1e-6 * std::max(1.0, t)) return v[i];
  }
  return kNaN;
}

}  // namespace

std::string to_string(Model m) {
  for (const auto& [k, v] : kModelNames) if (k == m) return v;
  return "?";
}

std::string to_string(Mode m) {
  for (const auto& [k, v] : kModeNames) if (k == m) return v;
  return "?";
}

Model model_from_string(const std::string& name) {
  for (const auto& [k, v] : kModelNames) if (v == name) return k;
  throw InvalidArgument("config: unknown model '" + name + "' (stefan, seaice, battery)");
}

Mode mode_from_string(const std::string& name) {
  for (const auto& [k, v] : kModeNames) if (v == name) return k;
  throw InvalidArgument("config: unknown mode '" + name + "'");
}

std::string to_string(Status s) {
  switch (s) {
    case Status::Ok: return "ok";
    case Status::ValidityHalt: return "validity-halt";
    case Status::NumericalFailure: return "numerical-failure";
  }
  return "?";
}

int exit_code(Status s) {
  switch (s) {
    case Status::Ok: return kExitOk;
    case Status::ValidityHalt: return kExitValidityHalt;
    case Status::NumericalFailure: return kExitNumericalFailure;
  }
  return kExitUsage;
}

std::uint64_t ScenarioConfig::seed() const { return values.at("seed").get<std::uint64_t>(); }
bool ScenarioConfig::strict_validity() const { return values.at("strict_validity").get<bool>(); }

json model_defaults(Model m) {
  json d = common_defaults();
  d["model"] = to_string(m);
  switch (m) {
    case Model::Stefan:
      // zinc
      d["params"] = {{"k", 116.0},           {"rho", 6570.0},      {"cp", 389.5}, {"latent", 1.12e5},
                     {"t_melt", 420.0},      {"domain_length", 1.0}, {"q_c", 1e5}, {"heat_input", json::array()}};
      d["gains"] = {{"lambda", 0.02}, {"l_gain", 2e-5}};
      d["grid"] = {{"n_points", 51}, {"safety", 0.4}};
      d["initial"] = {{"s0", 0.1}, {"plant_bump", 30.0}, {"s_hat0", 0.07}, {"observer_bump", 0.0},
                      {"observer_q0", -1.0}};
      d["t_end"] = 300.0;
      d["output_dt"] = 1.0;
      break;
    case Model::SeaIce: {
      const seaice::SeaIceParams p;
      const seaice::SeaIceObserverParams o;
      const seaice::SeaIceOptions opt;
      d["params"] = {{"rho_s", p.rho_s},     {"k_s", p.k_s},         {"rho", p.rho},
                     {"c0", p.c0},           {"k0", p.k0},           {"gamma1_kj", p.gamma1_kj},
                     {"gamma2", p.gamma2},   {"i0", p.i0},           {"kappa_i", p.kappa_i},
                     {"t_m1", p.t_m1},       {"t_m2", p.t_m2},       {"sigma", p.sigma},
                     {"q_latent", p.q_latent}, {"f_w", p.f_w},       {"salinity_A", p.salinity.A},
                     {"salinity_n", p.salinity.n_exp}, {"salinity_m", p.salinity.m_exp}, {"forcing_csv", ""}};
      d["gains"] = {{"lambda", o.lambda}, {"c", o.c},       {"epsilon", o.epsilon}, {"M", o.M},
                    {"H_bar", o.H_bar},   {"delta1", 0.0}, {"delta2", 0.0},        {"delta3", 0.0}};
      d["grid"] = {{"n_ice", opt.n_ice},       {"n_snow", opt.n_snow}, {"safety", opt.safety},
                   {"max_step", opt.max_step}, {"h_min", opt.h_min},   {"salinity_on", true}};
      d["initial"] = {{"H0", 2.8}, {"h0", 0.3}, {"amplitude", 1.0}, {"d", 0.25}, {"start_month", 0}};
      d["years"] = 5;
      d["t_end"] = 20.0 * seaice::kSecondsPerDay;
      d["output_dt"] = 3600.0;
      break;
    }
    case Model::Battery: {
      const battery::BatteryScenario sc;
      const auto& o = sc.observer;
      d["params"] = {{"params_file", ""}, {"contact_resistance", false}};
      d["gains"] = {{"lambda", o.lambda},           {"kappa", o.kappa},           {"ekf_p0_conc", o.ekf_p0_conc},
                    {"ekf_p0_radius", o.ekf_p0_radius}, {"ekf_q_conc", o.ekf_q_conc}, {"ekf_q_radius", o.ekf_q_radius},
                    {"ekf_r_meas", o.ekf_r_meas}};
      d["grid"] = {{"n_shell", sc.n_shell}, {"n_neg", sc.n_neg}, {"n_ekf", sc.n_ekf}, {"safety", sc.safety},
                   {"meas_dt", sc.meas_dt}};
      d["initial"] = {{"soc0", sc.soc0}, {"soc_hat0", sc.soc_hat0}, {"rp0_fraction", sc.rp0_fraction},
                      {"c_rate", sc.c_rate}, {"pin_interface", false}};
      d["t_end"] = sc.t_end;
      d["output_dt"] = sc.output_dt;
      break;
    }
  }
  return d;
}

namespace {

ScenarioConfig resolve(const json& base_doc, const std::vector<std::pair<json, std::string>>& layers) {
  std::string model_name;
  for (const auto* doc : {&base_doc}) {
    if (doc->contains("model")) model_name = doc->at("model").get<std::string>();
  }
  for (const auto& [doc, tag] : layers) {
    if (doc.contains("model") && doc.at("model").is_string()) model_name = doc.at("model").get<std::string>();
  }
  if (model_name.empty()) throw InvalidArgument("config: missing required key 'model'");
  ScenarioConfig c;
  c.model = model_from_string(model_name);
  c.values = model_defaults(c.model);
  tag_leaves(c.values, c.provenance, "", published_keys(c.model));
  for (const auto& [doc, tag] : layers) merge_into(c.values, c.provenance, doc, tag, "");
  c.name = c.values.at("name").get<std::string>();
  c.mode = mode_from_string(c.values.at("mode").get<std::string>());
  if (!supported_modes(c.model).count(c.mode)) {
    throw InvalidArgument("config: mode '" + to_string(c.mode) + "' is not available for model '" + model_name + "'");
  }
  const auto& seed = c.values.at("seed");
  if (!seed.is_number_integer() || seed.get<std::int64_t>() < 0) {
    throw InvalidArgument("config: 'seed' must be a nonnegative integer");
  }
  if (!(num(c.values, "noise_std") >= 0.0)) throw InvalidArgument("config: 'noise_std' must be nonnegative");
  if (!(num(c.values, "t_end") > 0.0)) throw InvalidArgument("config: 't_end' must be positive");
  if (!(num(c.values, "output_dt") > 0.0)) throw InvalidArgument("config: 'output_dt' must be positive");
  // builds the typed scenario once so bad values fail at load time
  switch (c.model) {
    case Model::Stefan: (void)stefan_scenario(c); break;
    case Model::SeaIce: (void)seaice_config(c); break;
    case Model::Battery: (void)battery::initial_states(battery_scenario(c)); break;
  }
  return c;
}

struct PresetDef {
  std::string name;
  std::string description;
  json doc;
  std::set<std::string> published;  // override paths with published values
};

std::vector<PresetDef> preset_table() {
  const double day = seaice::kSecondsPerDay;
  return {
      {"stefan-plant", "Stefan plant under constant heating", {{"model", "stefan"}, {"mode", "simulate"}}, {}},
      {"stefan-full", "Full-state observer measuring the interface and boundary temperature",
       {{"model", "stefan"}, {"mode", "observe-full"}, {"initial", {{"s_hat0", 0.1}, {"observer_bump", 0.0}}}},
       {}},
      {"ch3-practical-joint", "Joint temperature and interface observer from boundary temperature only",
       {{"model", "stefan"}, {"mode", "observe-joint"}}, {}},
      {"ch3-practical-baseline", "Copy-of-plant observer with interface injection",
       {{"model", "stefan"}, {"mode", "observe-baseline"}}, {}},
      {"ch7-fig1-annual", "Five-year sea-ice annual cycle under the monthly forcing table",
       {{"model", "seaice"}, {"mode", "simulate"}, {"output_dt", day}}, {}},
      {"ch7-fig2-observer", "Sea-ice backstepping observer, salinity in the plant only",
       {{"model", "seaice"}, {"mode", "observe-joint"}, {"t_end", 20.0 * day}}, {}},
      {"ch7-fig2-openloop", "Open-loop sea-ice estimate for comparison",
       {{"model", "seaice"}, {"mode", "observe-openloop"}, {"t_end", 40.0 * day}}, {}},
      {"ch7-fig4-robustness", "Sea-ice observer with 30-40% parameter errors",
       {{"model", "seaice"},
        {"mode", "robustness"},
        {"t_end", 20.0 * day},
        {"gains", {{"delta1", 0.3}, {"delta2", -0.3}, {"delta3", 0.4}}}},
       {"gains.delta1", "gains.delta2", "gains.delta3"}},
      {"ch8-voltage", "1C discharge of the shrinking-core cell",
       {{"model", "battery"}, {"mode", "simulate"}, {"t_end", 1800.0}, {"initial", {{"c_rate", 1.0}}}}, {}},
      {"ch8-estimation", "5C discharge with backstepping SoC and interface estimation",
       {{"model", "battery"}, {"mode", "observe-joint"}}, {}},
      {"ch8-comparison", "Backstepping observer and EKF under measurement noise at 2C",
       {{"model", "battery"},
        {"mode", "ekf"},
        {"t_end", 600.0},
        {"noise_std", 50.0},
        {"initial", {{"c_rate", 2.0}}}},
       {}},
  };
}

}  // namespace

ScenarioConfig make_config(const json& doc) {
  if (!doc.is_object()) throw InvalidArgument("config: document must be a JSON object");
  return resolve(doc, {{doc, "user"}});
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open " + path);
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config: " + path + ": " + e.what());
  }
  auto c = make_config(doc);
  if (c.name.empty()) c.name = std::filesystem::path(path).stem().string();
  return c;
}

std::vector<PresetInfo> list_presets() {
  std::vector<PresetInfo> out;
  for (const auto& p : preset_table()) out.push_back({p.name, p.description});
  return out;
}

ScenarioConfig preset(const std::string& name) {
  for (const auto& p : preset_table()) {
    if (p.name != name) continue;
    auto c = resolve(p.doc, {{p.doc, "chosen"}});
    std::function<void(const json&, json&, const std::string&)> retag = [&](const json& d, json& prov,
                                                                           const std::string& prefix) {
      for (auto it = d.begin(); it != d.end(); ++it) {
        const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (it->is_object()) {
          retag(*it, prov[it.key()], path);
        } else if (p.published.count(path)) {
          prov[it.key()] = "published";
        }
      }
    };
    retag(p.doc, c.provenance, "");
    c.values["name"] = name;
    c.provenance["name"] = "chosen";
    c.name = name;
    return c;
  }
  throw InvalidArgument("unknown preset '" + name + "'");
}

ScenarioConfig apply_overrides(const ScenarioConfig& base, const json& overrides) {
  if (overrides.contains("model") && overrides.at("model") != base.values.at("model")) {
    throw InvalidArgument("config: cannot change 'model' of an existing scenario");
  }
  ScenarioConfig c = base;
  merge_into(c.values, c.provenance, overrides, "user", "");
  auto doc = c.values;
  auto out = resolve(doc, {{doc, "user"}});
  out.provenance = c.provenance;
  return out;
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw InvalidArgument("records: no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> Table::values(const std::string& name) const {
  const auto k = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(r[k]);
  return out;
}

json derive_metrics(const Table& t, Model model, Mode mode) {
  json m = json::object();
  if (t.rows.empty()) return m;
  const auto time = t.values("time");
  const double t_last = time.back();
  m["t_end"] = t_last;
  m["samples"] = t.rows.size();
  auto decay = [&](const std::vector<double>& err) {
    return -metrics::fit_log_slope(time, err, time.front() + 0.5 * (t_last - time.front()), 1e-300);
  };

  if (model == Model::Stefan && mode == Mode::Simulate) {
    const auto resid = t.values("energy_residual");
    const auto energy = t.values("stored_energy");
    double worst = 0.0;
    for (std::size_t i = 0; i < resid.size(); ++i) worst = std::max(worst, std::abs(resid[i]) / std::abs(energy[i]));
    m["final_interface"] = t.values("s").back();
    m["energy_residual_rel"] = worst;
    const auto me = t.values("min_excess");
    m["min_excess"] = *std::min_element(me.begin(), me.end());
    return m;
  }
  if (model == Model::Stefan) {
    const auto h1 = t.values("h1_error");
    m["t10_h1"] = finite_or_null(metrics::time_to_fraction(time, h1, 0.1));
    m["t50_h1"] = finite_or_null(metrics::time_to_fraction(time, h1, 0.5));
    m["decay_rate_h1"] = finite_or_null(decay(h1));
    const auto ds = abs_diff(t, "s", "s_hat");
    m["t50_interface"] = finite_or_null(metrics::time_to_fraction(time, ds, 0.5));
    for (int k = 0; k < 4; ++k) {
      const auto e = abs_diff(t, "probe" + std::to_string(k) + "_true", "probe" + std::to_string(k) + "_est");
      m["t50_probe" + std::to_string(k)] = finite_or_null(metrics::time_to_fraction(time, e, 0.5));
    }
    m["interface_overshoot"] = metrics::max_overshoot(t.values("s"), t.values("s_hat"));
    m["final_h1"] = h1.back();
    return m;
  }
  if (model == Model::SeaIce && mode == Mode::Simulate) {
    const auto H = t.values("H");
    const double year = 12.0 * seaice::kSecondsPerMonth;
    std::vector<double> mx, mn;
    std::vector<std::size_t> mx_month, mn_month;
    for (std::size_t i = 1; i < H.size(); ++i) {
      const auto y = static_cast<std::size_t>(std::floor((time[i] - time.front()) / year - 1e-9));
      if (mx.size() <= y) {
        mx.resize(y + 1, -kInf);
        mn.resize(y + 1, kInf);
        mx_month.resize(y + 1, 0);
        mn_month.resize(y + 1, 0);
      }
      const auto month = seaice::MonthlyForcing::month_at(std::max(time[i] - time.front() - 1e-6, 0.0));
      if (H[i] > mx[y]) { mx[y] = H[i]; mx_month[y] = month; }
      if (H[i] < mn[y]) { mn[y] = H[i]; mn_month[y] = month; }
    }
    double per = kNaN;
    for (std::size_t y = 2; y < mx.size(); ++y) {
      per = std::isnan(per) ? 0.0 : per;
      per = std::max(per, std::abs(mx[y] - mx[y - 1]) / mx[y - 1]);
    }
    m["periodicity"] = finite_or_null(per);
    m["max_thickness_last_year"] = mx.empty() ? json(nullptr) : json(mx.back());
    m["min_thickness_last_year"] = mn.empty() ? json(nullptr) : json(mn.back());
    m["month_of_max_last_year"] = mx_month.empty() ? json(nullptr) : json(mx_month.back() + 1);
    m["month_of_min_last_year"] = mn_month.empty() ? json(nullptr) : json(mn_month.back() + 1);
    return m;
  }
  if (model == Model::SeaIce) {
    const auto l2 = t.values("l2_error");
    m["t10_l2_days"] = finite_or_null(metrics::time_to_fraction(time, l2, 0.1) / seaice::kSecondsPerDay);
    m["t50_l2_days"] = finite_or_null(metrics::time_to_fraction(time, l2, 0.5) / seaice::kSecondsPerDay);
    m["l2_ratio_day3"] = finite_or_null(value_at(time, l2, 3.0 * seaice::kSecondsPerDay) / l2.front());
    const auto os = t.values("max_overshoot");
    m["max_overshoot"] = *std::max_element(os.begin(), os.end());
    seaice::SeaIceEstimationRun run;
    const auto H = t.values("H"), Hh = t.values("H_hat");
    for (std::size_t i = 0; i < time.size(); ++i) {
      seaice::SeaIceEstimationSample s;
      s.time = time[i];
      s.H = H[i];
      s.H_hat = Hh[i];
      s.l2_error = l2[i];
      run.samples.push_back(s);
    }
    const auto rm = seaice::robustness_metrics(run);
    m["settle_day"] = finite_or_null(rm.settle_day);
    m["settle_band"] = rm.band;
    m["peak_thickness_error"] = rm.peak_thickness_error;
    m["tail_thickness_error"] = rm.tail_thickness_error;
    m["tail_profile_error"] = rm.tail_profile_error;
    return m;
  }
  // battery
  m["drift_plant"] = max_drift(t.values("n_li_plant"));
  m["final_soc"] = t.values("soc_true").back();
  m["final_voltage"] = finite_or_null(t.values("voltage").back());
  if (mode == Mode::Simulate) return m;
  m["drift_observer"] = max_drift(t.values("n_li_observer"));
  // variance window: last third, so a slower estimator's transient stays out
  const double tail = time.front() + (2.0 / 3.0) * (t_last - time.front());
  auto soc_metrics = [&](const std::string& col, const std::string& tag) {
    const auto est = t.values(col), truth = t.values("soc_true");
    std::vector<double> err(est.size()), signed_err(est.size());
    for (std::size_t i = 0; i < est.size(); ++i) {
      signed_err[i] = est[i] - truth[i];
      err[i] = std::abs(signed_err[i]);
    }
    m["t_soc_1pt_" + tag] = finite_or_null(metrics::time_to_level(time, err, 0.01));
    m["soc_tail_variance_" + tag] = metrics::tail_variance(time, signed_err, tail);
    m["soc_tail_max_" + tag] = metrics::tail_max_abs(time, signed_err, tail);
    m["final_soc_error_" + tag] = signed_err.back();
  };
  soc_metrics("soc_bks", "bks");
  m["t_interface_1pct"] = finite_or_null(metrics::time_to_level(time, abs_diff(t, "r_p", "r_hat"), 0.01));
  if (mode == Mode::Ekf) {
    soc_metrics("soc_ekf", "ekf");
    m["t_interface_1pct_ekf"] = finite_or_null(metrics::time_to_level(time, abs_diff(t, "r_p", "r_ekf"), 0.01));
  }
  return m;
}

RunResult run(const ScenarioConfig& config) {
  RunResult r;
  r.config = config;
  try {
    switch (config.model) {
      case Model::Stefan: run_stefan(config, r); break;
      case Model::SeaIce: run_seaice(config, r); break;
      case Model::Battery: run_battery(config, r); break;
    }
  } catch (const ValidityHalt& e) {
    r.status = Status::ValidityHalt;
    r.halt_reason = e.what();
  } catch (const NumericalFailure& e) {
    r.status = Status::NumericalFailure;
    r.halt_reason = e.what();
  } catch (const InvalidArgument& e) {
    // the config was checked up front, so this came from a state gone out of range
    r.status = Status::NumericalFailure;
    r.halt_reason = e.what();
  }
  if (r.records.columns.empty()) {
    // failed before the first sample; keep the schema of the mode
    switch (config.model) {
      case Model::Stefan: r.records.columns = config.mode == Mode::Simulate ? kStefanSimColumns : kStefanObsColumns; break;
      case Model::SeaIce: r.records.columns = config.mode == Mode::Simulate ? kSeaIceSimColumns : kSeaIceObsColumns; break;
      case Model::Battery: r.records.columns = kBatteryColumns; break;
    }
  }
  r.metrics = derive_metrics(r.records, config.model, config.mode);
  return r;
}

void write_records(const std::string& path, const RunResult& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << "# " << kRecordsSchema << " model=" << to_string(r.config.model) << " mode=" << to_string(r.config.mode)
      << " name=" << r.config.name << "\n";
  for (std::size_t k = 0; k < r.records.columns.size(); ++k) out << (k ? "," : "") << r.records.columns[k];
  out << "\n";
  char buf[64];
  for (const auto& row : r.records.rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out << ',';
      if (std::isnan(row[k])) {
        out << "nan";
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", row[k]);
        out << buf;
      }
    }
    out << "\n";
  }
  if (r.status != Status::Ok) out << "# halt: " << to_string(r.status) << ": " << r.halt_reason << "\n";
}

Table read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open records " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind(std::string("# ") + kRecordsSchema, 0) != 0) {
    throw InvalidArgument("records " + path + ": missing '# " + std::string(kRecordsSchema) + "' header");
  }
  Table t;
  if (!std::getline(in, line)) throw InvalidArgument("records " + path + ": missing column row");
  std::stringstream hs(line);
  for (std::string c; std::getline(hs, c, ',');) t.columns.push_back(c);
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
      if (cell == "nan") {
        row.push_back(kNaN);
        continue;
      }
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::logic_error&) {
        throw InvalidArgument("records " + path + ": bad value '" + cell + "' on line " + std::to_string(line_no));
      }
    }
    if (row.size() != t.columns.size()) {
      throw InvalidArgument("records " + path + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(row.size()) + " values, expected " + std::to_string(t.columns.size()));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

json summary_json(const RunResult& r) {
  return {{"schema", kSummarySchema},
          {"name", r.config.name},
          {"model", to_string(r.config.model)},
          {"mode", to_string(r.config.mode)},
          {"seed", r.config.seed()},
          {"status", to_string(r.status)},
          {"halt_reason", r.halt_reason},
          {"metrics", r.metrics},
          {"config", r.config.values},
          {"provenance", r.config.provenance}};
}

void write_summary(const std::string& path, const RunResult& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path);
  out << summary_json(r).dump(2) << "\n";
}

void write_outputs(const std::string& dir, const RunResult& r) {
  std::filesystem::create_directories(dir);
  write_records((std::filesystem::path(dir) / "records.csv").string(), r);
  write_summary((std::filesystem::path(dir) / "summary.json").string(), r);
}

json load_summary(const std::string& path_or_dir) {
  std::filesystem::path p(path_or_dir);
  if (std::filesystem::is_directory(p)) p /= "summary.json";
  std::ifstream in(p);
  if (!in) throw InvalidArgument("cannot open summary " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw InvalidArgument("summary " + p.string() + ": " + e.what());
  }
  if (!j.contains("schema") || j.at("schema") != kSummarySchema) {
    throw InvalidArgument("summary " + p.string() + ": not a " + std::string(kSummarySchema) + " document");
  }
  return j;
}

std::vector<ComparisonRow> compare(const json& a, const json& b) {
  const auto& ma = a.at("metrics");
  const auto& mb = b.at("metrics");
  auto as_number = [](const json& v) { return v.is_null() ? kInf : v.get<double>(); };
  std::vector<ComparisonRow> rows;
  for (auto it = ma.begin(); it != ma.end(); ++it) {
    if (!mb.contains(it.key())) continue;
    const auto& vb = mb.at(it.key());
    if (!(it->is_number() || it->is_null()) || !(vb.is_number() || vb.is_null())) continue;
    ComparisonRow row{it.key(), as_number(*it), as_number(vb), 0.0};
    row.delta = row.a == row.b ? 0.0 : row.b - row.a;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace phasest::runner
