#include "lamps/experiment.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "lamps/decomposition.hpp"
#include "lamps/ilqr.hpp"
#include "lamps/lds.hpp"
#include "lamps/mbrl.hpp"
#include "lamps/rng.hpp"
#include "lamps/tabular.hpp"
#include "lamps/widetree.hpp"

#ifndef LAMPS_VERSION
#define LAMPS_VERSION "unknown"
#endif

namespace lamps {
namespace {

constexpr std::array<std::pair<Experiment, std::string_view>, 5> kExperimentNames = {{
    {Experiment::identity_check, "identity_check"},
    {Experiment::widetree, "widetree"},
    {Experiment::lds, "lds"},
    {Experiment::ilqr, "ilqr"},
    {Experiment::tabular_mbrl, "tabular_mbrl"},
}};

constexpr std::uint64_t kIdentityStream = 41;
constexpr std::uint64_t kTabularInstanceStream = 42;

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

std::string type_label(const Json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

// Checks `value` against the shape of `like` and returns it in canonical form.
Json conform(const Json& like, const Json& value, const std::string& path) {
  auto mismatch = [&]() {
    return ConfigError("type mismatch at '" + path + "': expected " + type_label(like) +
                       ", got " + type_label(value));
  };
  if (like.is_object()) {
    if (!value.is_object()) throw mismatch();
    Json out = like;
    merge_settings(out, value);
    return out;
  }
  if (like.is_array()) {
    if (!value.is_array()) throw mismatch();
    if (like.empty()) return value;
    Json out = Json::array();
    for (std::size_t i = 0; i < value.size(); ++i) {
      out.push_back(conform(like[0], value[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
  }
  if (like.is_boolean()) {
    if (!value.is_boolean()) throw mismatch();
    return value;
  }
  if (like.is_number_integer()) {
    if (!value.is_number_integer()) throw mismatch();
    return value;
  }
  if (like.is_number()) {
    if (!value.is_number()) throw mismatch();
    return Json(value.get<double>());
  }
  if (like.is_string()) {
    if (!value.is_string()) throw mismatch();
    return value;
  }
  throw mismatch();
}

void merge_at(Json& base, const Json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("type mismatch at '" + (prefix.empty() ? std::string("<root>") : prefix) +
                      "': expected object, got " + type_label(user));
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = join_path(prefix, key);
    if (!base.contains(key)) throw ConfigError("unknown key '" + path + "'");
    Json& slot = base[key];
    if (slot.is_object()) {
      merge_at(slot, value, path);
    } else {
      slot = conform(slot, value, path);
    }
  }
}

const Json& section(const Json& settings, Experiment e) {
  return settings.at(std::string(experiment_name(e)));
}

int get_int(const Json& sec, const char* key, const std::string& sec_name, int min_value) {
  const long long v = sec.at(key).get<long long>();
  if (v < min_value || v > 1'000'000'000) {
    throw ConfigError("value out of range at '" + sec_name + "." + key + "': must be >= " +
                      std::to_string(min_value));
  }
  return static_cast<int>(v);
}

double get_positive(const Json& sec, const char* key, const std::string& sec_name) {
  const double v = sec.at(key).get<double>();
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw ConfigError("value out of range at '" + sec_name + "." + key + "': must be > 0");
  }
  return v;
}

double get_nonnegative(const Json& sec, const char* key, const std::string& sec_name) {
  const double v = sec.at(key).get<double>();
  if (!(v >= 0.0) || !std::isfinite(v)) {
    throw ConfigError("value out of range at '" + sec_name + "." + key + "': must be >= 0");
  }
  return v;
}

FitVariant parse_fit_variant(const std::string& s) {
  if (s == "mle") return FitVariant::mle;
  if (s == "moment_match_abs") return FitVariant::moment_match_abs;
  if (s == "moment_match_signed") return FitVariant::moment_match_signed;
  throw ConfigError("invalid value at 'tabular_mbrl.fit_variant': '" + s +
                    "' (expected mle, moment_match_abs or moment_match_signed)");
}

PolicyVariant parse_policy_variant(const std::string& s) {
  if (s == "lazy_disadvantage") return PolicyVariant::lazy_disadvantage;
  if (s == "full_planning") return PolicyVariant::full_planning;
  throw ConfigError("invalid value at 'tabular_mbrl.policy_variant': '" + s +
                    "' (expected lazy_disadvantage or full_planning)");
}

// Validates every section so a bad value surfaces before any seed runs.
void validate_sections(const Json& settings) {
  {
    const Json& s = section(settings, Experiment::identity_check);
    const std::string n = "identity_check";
    get_int(s, "instances", n, 1);
    get_int(s, "max_states", n, 2);
    get_int(s, "max_actions", n, 1);
    get_positive(s, "tolerance", n);
    if (s.at("discounts").empty()) {
      throw ConfigError("value out of range at 'identity_check.discounts': must be nonempty");
    }
    for (const auto& g : s.at("discounts")) {
      const double v = g.get<double>();
      if (!(v >= 0.0 && v < 1.0)) {
        throw ConfigError("value out of range at 'identity_check.discounts': must lie in [0, 1)");
      }
    }
  }
  {
    const Json& s = section(settings, Experiment::widetree);
    const std::string n = "widetree";
    get_int(s, "n_leaves", n, 4);
    get_int(s, "iterations", n, 1);
    get_int(s, "samples_per_iter", n, 1);
    get_positive(s, "epsilon_cost", n);
    if (get_positive(s, "hedge_beta", n) >= 1.0) {
      throw ConfigError("value out of range at 'widetree.hedge_beta': must lie in (0, 1)");
    }
    const double g = s.at("discount").get<double>();
    if (!(g > 0.0 && g < 1.0)) {
      throw ConfigError("value out of range at 'widetree.discount': must lie in (0, 1)");
    }
    const double eps = s.at("epsilon_cost").get<double>();
    if (!(eps < 1.0)) {
      throw ConfigError("value out of range at 'widetree.epsilon_cost': must lie in (0, 1)");
    }
    if (s.at("n_leaves").get<long long>() % 4 != 0) {
      throw ConfigError("value out of range at 'widetree.n_leaves': must be a multiple of 4");
    }
  }
  {
    const Json& s = section(settings, Experiment::lds);
    const std::string n = "lds";
    get_int(s, "state_dim", n, 1);
    get_int(s, "horizon", n, 1);
    get_int(s, "iterations", n, 1);
    get_int(s, "samples_per_iter", n, 1);
    get_int(s, "step_budget", n, 1);
    get_positive(s, "step_size", n);
    get_nonnegative(s, "reg_strength", n);
  }
  {
    const Json& s = section(settings, Experiment::ilqr);
    const std::string n = "ilqr";
    get_int(s, "horizon", n, 1);
    get_int(s, "iterations", n, 1);
    get_int(s, "samples_per_iter", n, 1);
    get_int(s, "max_ilqr_iters", n, 1);
    get_positive(s, "dt", n);
    get_nonnegative(s, "process_noise_std", n);
    get_nonnegative(s, "nu_state_std", n);
    get_nonnegative(s, "nu_control_std", n);
    get_positive(s, "reg_strength", n);
    get_positive(s, "conv_tol", n);
    if (s.at("initial_theta").size() != 3) {
      throw ConfigError("value out of range at 'ilqr.initial_theta': expected 3 entries");
    }
  }
  {
    const Json& s = section(settings, Experiment::tabular_mbrl);
    const std::string n = "tabular_mbrl";
    get_int(s, "num_states", n, 1);
    get_int(s, "num_actions", n, 1);
    get_int(s, "iterations", n, 1);
    get_int(s, "samples_per_iter", n, 1);
    get_int(s, "max_sweeps", n, 1);
    get_int(s, "instance_seed", n, 0);
    get_positive(s, "eps_po", n);
    get_positive(s, "eps_oc", n);
    get_positive(s, "laplace_alpha", n);
    const double g = s.at("discount").get<double>();
    if (!(g >= 0.0 && g < 1.0)) {
      throw ConfigError("value out of range at 'tabular_mbrl.discount': must lie in [0, 1)");
    }
    parse_fit_variant(s.at("fit_variant").get<std::string>());
    parse_policy_variant(s.at("policy_variant").get<std::string>());
  }
}

int uniform_int(Rng& rng, int lo, int hi) {
  const auto span = static_cast<double>(hi - lo + 1);
  return lo + std::min(hi - lo, static_cast<int>(uniform01(rng) * span));
}

SeedOutput run_identity_check(const Json& s, std::uint64_t seed) {
  const int instances = s.at("instances").get<int>();
  const int max_states = s.at("max_states").get<int>();
  const int max_actions = s.at("max_actions").get<int>();
  const double tolerance = s.at("tolerance").get<double>();
  const auto& discounts = s.at("discounts");

  Rng rng(derive_seed(seed, kIdentityStream));
  Table table;
  table.columns = {"instance",          "num_states",        "num_actions",
                   "discount",          "residual_simulation", "residual_pdpm",
                   "residual_pdam",     "lhs_gap"};
  Json entries = Json::array();
  double max_residual = 0.0;
  for (int i = 0; i < instances; ++i) {
    const int S = uniform_int(rng, 2, max_states);
    const int A = uniform_int(rng, 1, max_actions);
    const double gamma = discounts[static_cast<std::size_t>(i) % discounts.size()].get<double>();
    const TabularMdp mdp = random_mdp(S, A, gamma, rng);
    const TransitionModel model_hat = random_model(S, A, rng);
    const Policy policy_hat = random_policy(S, A, rng);
    const Policy policy_star = optimal_policy(mdp, mdp.dynamics());

    const DecompositionReport sim = simulation_lemma(mdp, model_hat, policy_hat);
    const DecompositionReport pdpm = pdpm_decomposition(mdp, model_hat, policy_hat, policy_star);
    const DecompositionReport pdam = pdam_decomposition(mdp, model_hat, policy_hat, policy_star);
    const double lhs_gap = std::abs(pdpm.lhs - pdam.lhs);
    max_residual = std::max({max_residual, sim.residual, pdpm.residual, pdam.residual});
    table.add_row({static_cast<double>(i), static_cast<double>(S), static_cast<double>(A), gamma,
                   sim.residual, pdpm.residual, pdam.residual, lhs_gap});

    Json entry;
    entry["instance"] = i;
    entry["num_states"] = S;
    entry["num_actions"] = A;
    entry["discount"] = gamma;
    entry["simulation_lemma"] = report_to_json(sim);
    entry["pdpm"] = report_to_json(pdpm);
    entry["pdam"] = report_to_json(pdam);
    entry["lhs_gap"] = lhs_gap;
    entries.push_back(std::move(entry));
  }
  Json report;
  report["seed"] = seed;
  report["tolerance"] = tolerance;
  report["max_residual"] = max_residual;
  report["all_within_tolerance"] = max_residual <= tolerance;
  report["instances"] = std::move(entries);
  return {std::move(table), std::move(report)};
}

SeedOutput run_widetree(const Json& s, std::uint64_t seed) {
  WideTreeSpec spec;
  spec.n_leaves = s.at("n_leaves").get<int>();
  spec.epsilon_cost = s.at("epsilon_cost").get<double>();
  spec.discount = s.at("discount").get<double>();
  WideTreeConfig cfg;
  cfg.iterations = s.at("iterations").get<int>();
  cfg.hedge_beta = s.at("hedge_beta").get<double>();
  cfg.samples_per_iter = s.at("samples_per_iter").get<std::size_t>();
  cfg.rng_seed = seed;
  return {run_widetree_experiment(spec, cfg).table(), std::nullopt};
}

SeedOutput run_lds(const Json& s, std::uint64_t seed) {
  const LdsTruth truth =
      LdsTruth::alternating(s.at("state_dim").get<int>(), s.at("horizon").get<int>());
  LdsExperimentConfig cfg;
  cfg.iterations = s.at("iterations").get<int>();
  cfg.samples_per_iter = s.at("samples_per_iter").get<std::size_t>();
  cfg.step_size = s.at("step_size").get<double>();
  cfg.step_budget = s.at("step_budget").get<int>();
  cfg.reg_strength = s.at("reg_strength").get<double>();
  cfg.rng_seed = seed;
  return {run_lds_experiment(truth, cfg).table(), std::nullopt};
}

SeedOutput run_ilqr(const Json& s, std::uint64_t seed) {
  const NonlinearSystem system =
      NonlinearSystem::pendulum(s.at("horizon").get<int>(), s.at("dt").get<double>());
  IlqrExperimentConfig cfg;
  cfg.iterations = s.at("iterations").get<int>();
  cfg.samples_per_iter = s.at("samples_per_iter").get<std::size_t>();
  cfg.process_noise_std = s.at("process_noise_std").get<double>();
  cfg.nu_state_std = s.at("nu_state_std").get<double>();
  cfg.nu_control_std = s.at("nu_control_std").get<double>();
  cfg.reg_strength = s.at("reg_strength").get<double>();
  cfg.conv_tol = s.at("conv_tol").get<double>();
  cfg.max_ilqr_iters = s.at("max_ilqr_iters").get<int>();
  cfg.rng_seed = seed;
  const auto theta = s.at("initial_theta").get<std::vector<double>>();
  cfg.initial_theta = Eigen::Map<const VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
  return {run_ilqr_experiment(system, hold_trajectory(system), cfg).table(), std::nullopt};
}

SeedOutput run_tabular(const Json& s, std::uint64_t seed) {
  const int S = s.at("num_states").get<int>();
  const int A = s.at("num_actions").get<int>();
  Rng instance_rng(derive_seed(s.at("instance_seed").get<std::uint64_t>(), kTabularInstanceStream));
  const TabularMdp mdp = random_mdp(S, A, s.at("discount").get<double>(), instance_rng);

  MbrlConfig cfg;
  cfg.iterations = s.at("iterations").get<int>();
  cfg.samples_per_iter = s.at("samples_per_iter").get<std::size_t>();
  cfg.eps_po = s.at("eps_po").get<double>();
  cfg.eps_oc = s.at("eps_oc").get<double>();
  cfg.max_sweeps = s.at("max_sweeps").get<int>();
  cfg.laplace_alpha = s.at("laplace_alpha").get<double>();
  cfg.fit_variant = parse_fit_variant(s.at("fit_variant").get<std::string>());
  cfg.policy_variant = parse_policy_variant(s.at("policy_variant").get<std::string>());
  cfg.rng_seed = seed;

  const MetaLoopResult result = run_meta_loop(mdp, ModelClass::tabular(S, A),
                                              ExplorationDistribution::uniform(S, A), cfg);
  Table table = metrics_table(result.metrics);
  table.columns.push_back("bound_lhs");
  table.columns.push_back("bound_rhs");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    table.rows[i].push_back(result.bounds[i].lhs);
    table.rows[i].push_back(result.bounds[i].rhs);
  }
  return {std::move(table), std::nullopt};
}

std::string seed_stem(Experiment e, std::uint64_t seed) {
  return std::string(experiment_name(e)) + "_seed" + std::to_string(seed);
}

}  // namespace

std::string_view experiment_name(Experiment e) {
  for (const auto& [value, name] : kExperimentNames) {
    if (value == e) return name;
  }
  return "unknown";
}

Experiment parse_experiment(std::string_view name) {
  for (const auto& [value, tag] : kExperimentNames) {
    if (tag == name) return value;
  }
  throw ConfigError("unknown experiment '" + std::string(name) +
                    "' (expected identity_check, widetree, lds, ilqr or tabular_mbrl)");
}

Json default_settings() {
  Json d;
  d["experiment"] = "identity_check";
  d["seeds"] = Json::array({0});
  d["output_dir"] = "out";

  Json& id = d["identity_check"];
  id["instances"] = 50;
  id["max_states"] = 10;
  id["max_actions"] = 4;
  id["discounts"] = Json::array({0.5, 0.9, 0.95});
  id["tolerance"] = 1e-8;

  Json& wt = d["widetree"];
  wt["n_leaves"] = 16;
  wt["epsilon_cost"] = 0.01;
  wt["discount"] = 0.99;
  wt["iterations"] = 100;
  wt["samples_per_iter"] = 100;
  wt["hedge_beta"] = 0.9;

  Json& lds = d["lds"];
  lds["state_dim"] = 2;
  lds["horizon"] = 100;
  lds["iterations"] = 30;
  lds["samples_per_iter"] = 100;
  lds["step_size"] = 1e-3;
  lds["step_budget"] = 500;
  lds["reg_strength"] = 1e-4;

  Json& il = d["ilqr"];
  il["horizon"] = 50;
  il["dt"] = 0.05;
  il["iterations"] = 20;
  il["samples_per_iter"] = 100;
  il["process_noise_std"] = 0.01;
  il["nu_state_std"] = 0.05;
  il["nu_control_std"] = 0.1;
  il["reg_strength"] = 1e-8;
  il["conv_tol"] = 1e-9;
  il["max_ilqr_iters"] = 100;
  il["initial_theta"] = Json::array({5.0, 2.0, 0.5});

  Json& tab = d["tabular_mbrl"];
  tab["num_states"] = 8;
  tab["num_actions"] = 3;
  tab["discount"] = 0.9;
  tab["instance_seed"] = 0;
  tab["iterations"] = 16;
  tab["samples_per_iter"] = 100;
  tab["fit_variant"] = "mle";
  tab["policy_variant"] = "lazy_disadvantage";
  tab["eps_po"] = 1e-6;
  tab["eps_oc"] = 1e-8;
  tab["max_sweeps"] = 100;
  tab["laplace_alpha"] = 1.0;
  return d;
}

Json parse_settings_text(const std::string& text) {
  if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) {
    return Json::object();
  }
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

void merge_settings(Json& base, const Json& user) { merge_at(base, user, ""); }

void apply_override(Json& settings, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  Json* slot = &settings;
  std::string walked;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = join_path(walked, key);
    if (!slot->is_object() || !slot->contains(key)) throw ConfigError("unknown key '" + walked + "'");
    slot = &(*slot)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }

  Json value;
  if (slot->is_string()) {
    value = raw;
  } else if (slot->is_array() && !raw.empty() && raw.front() != '[') {
    value = Json::array();
    std::stringstream items(raw);
    std::string item;
    while (std::getline(items, item, ',')) {
      try {
        value.push_back(Json::parse(item));
      } catch (const Json::parse_error&) {
        throw ConfigError("malformed list value for '" + path + "': '" + raw + "'");
      }
    }
  } else {
    try {
      value = Json::parse(raw);
    } catch (const Json::parse_error&) {
      throw ConfigError("malformed value for '" + path + "': '" + raw + "'");
    }
  }
  *slot = conform(*slot, value, path);
}

ExperimentConfig config_from_settings(const Json& settings) {
  ExperimentConfig config;
  config.experiment = parse_experiment(settings.at("experiment").get<std::string>());
  const Json& seeds = settings.at("seeds");
  if (seeds.empty()) throw ConfigError("value out of range at 'seeds': must be nonempty");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (seeds[i].get<long long>() < 0) {
      throw ConfigError("value out of range at 'seeds[" + std::to_string(i) + "]': must be >= 0");
    }
    config.seeds.push_back(seeds[i].get<std::uint64_t>());
  }
  config.output_dir = settings.at("output_dir").get<std::string>();
  validate_sections(settings);
  config.settings = settings;
  return config;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& config_file,
                             std::optional<std::string_view> experiment,
                             const std::vector<std::string>& overrides) {
  Json settings = default_settings();
  if (config_file) {
    std::ifstream in(*config_file, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + config_file->string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    merge_settings(settings, parse_settings_text(buf.str()));
  }
  if (experiment) {
    parse_experiment(*experiment);
    settings["experiment"] = std::string(*experiment);
  }
  for (const auto& o : overrides) apply_override(settings, o);
  return config_from_settings(settings);
}

SeedOutput run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  const Json& s = section(config.settings, config.experiment);
  switch (config.experiment) {
    case Experiment::identity_check: return run_identity_check(s, seed);
    case Experiment::widetree: return run_widetree(s, seed);
    case Experiment::lds: return run_lds(s, seed);
    case Experiment::ilqr: return run_ilqr(s, seed);
    case Experiment::tabular_mbrl: return run_tabular(s, seed);
  }
  throw std::logic_error("run_seed: unhandled experiment");
}

Table aggregate_tables(const std::vector<Table>& tables) {
  if (tables.empty()) throw std::invalid_argument("aggregate_tables: no tables");
  const auto& columns = tables.front().columns;
  if (columns.empty()) throw std::invalid_argument("aggregate_tables: table without columns");
  for (const auto& t : tables) {
    if (t.columns != columns) throw std::invalid_argument("aggregate_tables: headers differ");
  }
  // Row keys in first-seen order.
  std::vector<double> keys;
  std::map<double, std::vector<const std::vector<double>*>> by_key;
  for (const auto& t : tables) {
    for (const auto& row : t.rows) {
      auto [it, inserted] = by_key.try_emplace(row.at(0));
      if (inserted) keys.push_back(row.at(0));
      it->second.push_back(&row);
    }
  }
  Table out;
  out.columns.push_back(columns[0]);
  for (std::size_t c = 1; c < columns.size(); ++c) {
    out.columns.push_back(columns[c] + "_mean");
    out.columns.push_back(columns[c] + "_stderr");
  }
  for (double key : keys) {
    const auto& rows = by_key.at(key);
    const auto n = static_cast<double>(rows.size());
    std::vector<double> line{key};
    for (std::size_t c = 1; c < columns.size(); ++c) {
      double sum = 0.0;
      for (const auto* r : rows) sum += r->at(c);
      const double mean = sum / n;
      double ss = 0.0;
      for (const auto* r : rows) ss += (r->at(c) - mean) * (r->at(c) - mean);
      const double stderr_ = rows.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
      line.push_back(mean);
      line.push_back(stderr_);
    }
    out.add_row(std::move(line));
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const Json& settings) {
  Json canonical = settings;
  canonical.erase("output_dir");
  canonical.erase("seeds");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical.dump())));
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot move output into place at '" + path.string() + "'");
  }
}

RunSummary run(const ExperimentConfig& config) {
  RunSummary summary;
  const auto& dir = config.output_dir;
  const std::string name(experiment_name(config.experiment));
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    summary.exit_code = 2;
    summary.error = "cannot create output directory '" + dir.string() + "'";
    return summary;
  }

  std::vector<Table> tables;
  for (std::uint64_t seed : config.seeds) {
    SeedStatus status;
    status.seed = seed;
    try {
      SeedOutput output = run_seed(config, seed);
      status.csv = dir / (seed_stem(config.experiment, seed) + ".csv");
      write_file_atomic(status.csv, output.table.to_csv());
      if (output.report) {
        write_file_atomic(dir / (seed_stem(config.experiment, seed) + ".json"),
                          output.report->dump(2) + "\n");
      }
      tables.push_back(std::move(output.table));
      status.ok = true;
    } catch (const std::exception& e) {
      status.ok = false;
      status.message = e.what();
      status.csv.clear();
    }
    summary.seeds.push_back(std::move(status));
  }

  Json manifest;
  manifest["experiment"] = name;
  manifest["version"] = LAMPS_VERSION;
  manifest["config_hash"] = config_hash(config.settings);
  manifest["seeds"] = config.seeds;
  Json statuses = Json::array();
  for (const auto& s : summary.seeds) {
    Json entry;
    entry["seed"] = s.seed;
    entry["status"] = s.ok ? "ok" : "failed";
    if (s.ok) {
      entry["csv"] = s.csv.filename().string();
    } else {
      entry["error"] = s.message;
    }
    statuses.push_back(std::move(entry));
  }
  manifest["seed_status"] = std::move(statuses);

  try {
    if (!tables.empty()) {
      summary.aggregate_csv = dir / (name + "_aggregate.csv");
      write_file_atomic(summary.aggregate_csv, aggregate_tables(tables).to_csv());
      manifest["aggregate_csv"] = summary.aggregate_csv.filename().string();
    } else {
      manifest["aggregate_csv"] = nullptr;
    }
    manifest["settings"] = config.settings;
    summary.manifest = dir / "manifest.json";
    write_file_atomic(summary.manifest, manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    summary.exit_code = 2;
    summary.error = e.what();
    return summary;
  }
  summary.exit_code = tables.empty() ? 2 : 0;
  return summary;
}

}  // namespace lamps
