// Command-line front end for the experiment runner.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lamps/experiment.hpp"

namespace {

void list_defaults(const lamps::Json& node, const std::string& prefix, std::string& out) {
  for (const auto& [key, value] : node.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      list_defaults(value, path, out);
    } else {
      out += "  " + path + " = " + value.dump() + "\n";
    }
  }
}

std::string defaults_footer() {
  std::string out =
      "\nEvery setting below can be given in the --config file (nested JSON objects)\n"
      "or as --override <key>=<value>. Defaults:\n";
  list_defaults(lamps::default_settings(), "", out);
  out +=
      "\nOutputs in --out: <experiment>_seed<k>.csv per seed, <experiment>_aggregate.csv,\n"
      "manifest.json (and <experiment>_seed<k>.json reports for identity_check).\n"
      "Exit codes: 0 success, 1 usage error, 2 runtime failure in every seed.\n";
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based RL experiment runner"};
  app.footer(defaults_footer());

  std::string experiment;
  std::optional<std::string> config_file;
  std::optional<std::string> seeds;
  std::optional<std::string> out_dir;
  std::optional<int> iters;
  std::vector<std::string> overrides;

  app.add_option("experiment", experiment,
                 "identity_check | widetree | lds | ilqr | tabular_mbrl")
      ->required();
  app.add_option("--config", config_file, "JSON settings file (empty file means all defaults)");
  app.add_option("--seeds", seeds, "Comma-separated seed list, e.g. 0,1,2");
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--iters", iters,
                 "Iterations (instances for identity_check) for the chosen experiment");
  app.add_option("--override", overrides, "Dotted key=value assignment; repeatable")
      ->take_all();
  app.set_version_flag("--version", LAMPS_VERSION);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  lamps::ExperimentConfig config;
  try {
    std::vector<std::string> assignments;
    if (seeds) assignments.push_back("seeds=" + *seeds);
    if (out_dir) assignments.push_back("output_dir=" + *out_dir);
    if (iters) {
      const char* key = experiment == "identity_check" ? ".instances=" : ".iterations=";
      assignments.push_back(experiment + key + std::to_string(*iters));
    }
    assignments.insert(assignments.end(), overrides.begin(), overrides.end());
    config = lamps::load_config(config_file ? std::optional<std::filesystem::path>(*config_file)
                                            : std::nullopt,
                                experiment, assignments);
  } catch (const lamps::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const lamps::RunSummary summary = lamps::run(config);
  for (const auto& s : summary.seeds) {
    if (s.ok) {
      std::cout << "seed " << s.seed << ": ok -> " << s.csv.string() << "\n";
    } else {
      std::cerr << "seed " << s.seed << ": failed: " << s.message << "\n";
    }
  }
  if (!summary.error.empty()) std::cerr << "error: " << summary.error << "\n";
  if (!summary.aggregate_csv.empty()) std::cout << "aggregate -> " << summary.aggregate_csv.string() << "\n";
  if (!summary.manifest.empty()) std::cout << "manifest -> " << summary.manifest.string() << "\n";
  return summary.exit_code;
}
