#pragma once

// Experiment runner: configuration documents, per-seed execution, and
// persisted artifacts (per-seed CSVs, an aggregate CSV, a JSON manifest).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lamps/json_io.hpp"
#include "lamps/table.hpp"

namespace lamps {

enum class Experiment { identity_check, widetree, lds, ilqr, tabular_mbrl };

std::string_view experiment_name(Experiment e);
/// Throws ConfigError for an unknown tag.
Experiment parse_experiment(std::string_view name);

/// Malformed document, unknown key, or type mismatch; the message names the
/// dotted key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  Experiment experiment = Experiment::identity_check;
  std::vector<std::uint64_t> seeds;     // nonempty
  std::filesystem::path output_dir;
  /// Complete settings document (defaults merged with user values); every
  /// domain section is present.
  Json settings;
};

/// Every accepted key with its default value. Sections per experiment.
Json default_settings();

/// Parses a JSON document; whitespace-only text counts as {}.
Json parse_settings_text(const std::string& text);

/// Merges `user` into `base`, rejecting keys absent from `base` and values
/// whose type differs from the one already there.
void merge_settings(Json& base, const Json& user);

/// Applies "dotted.key=value". The value is read as JSON when it parses and as
/// a string otherwise; for integer-list keys a bare comma list "0,1,2" is
/// accepted.
void apply_override(Json& settings, const std::string& assignment);

/// Builds the typed config from a merged settings document.
ExperimentConfig config_from_settings(const Json& settings);

/// File-or-empty config plus overrides applied in order. The experiment key
/// in `experiment` (when given) wins over the file.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& config_file,
                             std::optional<std::string_view> experiment,
                             const std::vector<std::string>& overrides);

/// Output of one seed: the CSV table and, for identity_check, a report.
struct SeedOutput {
  Table table;
  std::optional<Json> report;
};

/// Runs one seed of the configured experiment. Deterministic in (settings, seed).
SeedOutput run_seed(const ExperimentConfig& config, std::uint64_t seed);

/// Per-key mean and standard error (sample deviation over sqrt(n)) across
/// tables sharing a header. Rows are matched on the first column; a row key
/// missing from some tables is aggregated over the tables that have it.
/// Columns: <key>, then <col>_mean, <col>_stderr for each remaining column.
Table aggregate_tables(const std::vector<Table>& tables);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

/// Hash of the settings document without output_dir and seeds.
std::string config_hash(const Json& settings);

struct SeedStatus {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string message;  // error text when !ok
  std::filesystem::path csv;
};

struct RunSummary {
  int exit_code = 0;  // 0 ok, 2 every seed failed or artifacts could not be written
  std::vector<SeedStatus> seeds;
  std::filesystem::path aggregate_csv;
  std::filesystem::path manifest;
  std::string error;  // set when writing shared artifacts failed
};

/// Runs every seed, writes <exp>_seed<k>.csv (and .json reports), an
/// <exp>_aggregate.csv over the successful seeds, and manifest.json. A failing
/// seed is recorded in the manifest without stopping the others.
RunSummary run(const ExperimentConfig& config);

/// Writes via a temporary sibling file and a rename. Throws std::runtime_error.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace lamps
