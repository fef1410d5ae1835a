#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace phasest::runner {

enum class Model { Stefan, SeaIce, Battery };
enum class Mode { Simulate, ObserveFull, ObserveJoint, ObserveBaseline, ObserveOpenLoop, Ekf, Robustness };

std::string to_string(Model model);
std::string to_string(Mode mode);
Model model_from_string(const std::string& name);
Mode mode_from_string(const std::string& name);

/// Resolved scenario: model defaults, then preset, then user keys. `values`
/// mirrors the schema of the model exactly; `provenance` has the same shape
/// with "published", "chosen" or "user" at every leaf.
struct ScenarioConfig {
  std::string name;
  Model model = Model::Stefan;
  Mode mode = Mode::Simulate;
  nlohmann::json values;
  nlohmann::json provenance;

  std::uint64_t seed() const;
  bool strict_validity() const;
};

// Every key a config file may use for `model`, with default values.
nlohmann::json model_defaults(Model model);

// Parses and validates a config document. Unknown keys, wrong types and
// modes the model does not support throw InvalidArgument naming the field.
ScenarioConfig make_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::string& path);

struct PresetInfo {
  std::string name;
  std::string description;
};
std::vector<PresetInfo> list_presets();
ScenarioConfig preset(const std::string& name);

// Applies user keys on top of an already resolved config.
ScenarioConfig apply_overrides(const ScenarioConfig& base, const nlohmann::json& overrides);

/// Columnar time series. Missing values are NaN.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;
  std::vector<double> values(const std::string& name) const;
};

inline constexpr const char* kRecordsSchema = "phasest-records/1";
inline constexpr const char* kSummarySchema = "phasest-summary/1";

enum class Status { Ok, ValidityHalt, NumericalFailure };
std::string to_string(Status status);

struct RunResult {
  ScenarioConfig config;
  Table records;
  Status status = Status::Ok;
  std::string halt_reason;
  nlohmann::json metrics;
};

// Headline metrics derived from the records alone, so a summary can be
// re-derived from its CSV.
nlohmann::json derive_metrics(const Table& records, Model model, Mode mode);

RunResult run(const ScenarioConfig& config);

// CSV with a "# phasest-records/1 ..." first line; NaN written as "nan".
void write_records(const std::string& path, const RunResult& result);
Table read_records(const std::string& path);

nlohmann::json summary_json(const RunResult& result);
void write_summary(const std::string& path, const RunResult& result);

// records.csv and summary.json under `dir`, created if missing.
void write_outputs(const std::string& dir, const RunResult& result);

struct ComparisonRow {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
};

// Paired table over the numeric metrics present in both summaries.
std::vector<ComparisonRow> compare(const nlohmann::json& summary_a, const nlohmann::json& summary_b);
nlohmann::json load_summary(const std::string& path_or_dir);

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitValidityHalt = 2;
inline constexpr int kExitNumericalFailure = 3;

int exit_code(Status status);

}  // namespace phasest::runner
