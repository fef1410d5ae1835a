#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "phasest/numerics.hpp"
#include "phasest/runner.hpp"

namespace rn = phasest::runner;

namespace {

struct RunFlags {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool strict = false;
  std::string mode;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  auto* cfg = cmd->add_option("--config", f.config, "Scenario file (JSON)")->check(CLI::ExistingFile);
  auto* pre = cmd->add_option("--preset", f.preset, "Named preset, see list-presets");
  cfg->excludes(pre);
  cmd->add_option("--seed", f.seed, "Noise seed");
  cmd->add_option("--out", f.out, "Output directory (default runs/<name>)");
  cmd->add_flag("--strict-validity", f.strict, "Halt at the first invalid plant state");
}

rn::ScenarioConfig resolve(const RunFlags& f) {
  if (f.config.empty() && f.preset.empty()) throw phasest::InvalidArgument("one of --config or --preset is required");
  auto c = f.config.empty() ? rn::preset(f.preset) : rn::load_config(f.config);
  nlohmann::json over = nlohmann::json::object();
  if (f.seed) over["seed"] = *f.seed;
  if (f.strict) over["strict_validity"] = true;
  if (!f.mode.empty()) over["mode"] = f.mode;
  if (!over.empty()) c = rn::apply_overrides(c, over);
  return c;
}

int execute(const rn::ScenarioConfig& c, const RunFlags& f) {
  const auto result = rn::run(c);
  const std::string dir = f.out.empty() ? (std::filesystem::path("runs") / (c.name.empty() ? "run" : c.name)).string()
                                        : f.out;
  rn::write_outputs(dir, result);
  std::cout << c.name << " [" << rn::to_string(c.model) << "/" << rn::to_string(c.mode) << "] "
            << rn::to_string(result.status) << ", " << result.records.rows.size() << " records -> " << dir << "\n";
  if (!result.halt_reason.empty()) std::cout << "  " << result.halt_reason << "\n";
  for (auto it = result.metrics.begin(); it != result.metrics.end(); ++it) {
    std::cout << "  " << it.key() << " = " << it.value().dump() << "\n";
  }
  return rn::exit_code(result.status);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Observer experiments for Stefan-type phase change models"};
  app.require_subcommand(1);

  RunFlags sim_flags;
  auto* sim = app.add_subcommand("simulate", "Run the plant alone");
  add_run_flags(sim, sim_flags);

  RunFlags obs_flags;
  auto* obs = app.add_subcommand("observe", "Run plant and estimator");
  add_run_flags(obs, obs_flags);
  obs->add_option("--mode", obs_flags.mode,
                  "observe-full, observe-joint, observe-baseline, observe-openloop, ekf or robustness");

  std::string run_a, run_b;
  auto* cmp = app.add_subcommand("compare", "Paired metrics of two runs (b - a)");
  cmp->add_option("run_a", run_a, "Run directory or summary.json")->required();
  cmp->add_option("run_b", run_b, "Run directory or summary.json")->required();

  auto* lst = app.add_subcommand("list-presets", "Show the preset library");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? rn::kExitOk : rn::kExitUsage;
  }

  try {
    if (*lst) {
      for (const auto& p : rn::list_presets()) std::printf("%-24s %s\n", p.name.c_str(), p.description.c_str());
      return rn::kExitOk;
    }
    if (*cmp) {
      const auto a = rn::load_summary(run_a);
      const auto b = rn::load_summary(run_b);
      std::printf("%-28s %14s %14s %14s\n", "metric", "a", "b", "b - a");
      for (const auto& row : rn::compare(a, b)) {
        std::printf("%-28s %14s %14s %14s\n", row.metric.c_str(), fmt(row.a).c_str(), fmt(row.b).c_str(),
                    fmt(row.delta).c_str());
      }
      return rn::kExitOk;
    }
    if (*sim) {
      sim_flags.mode = "simulate";
      return execute(resolve(sim_flags), sim_flags);
    }
    auto c = resolve(obs_flags);
    if (c.mode == rn::Mode::Simulate) {
      throw phasest::InvalidArgument("scenario '" + c.name + "' has mode simulate; use the simulate subcommand or --mode");
    }
    return execute(c, obs_flags);
  } catch (const phasest::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rn::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rn::kExitNumericalFailure;
  }
}
