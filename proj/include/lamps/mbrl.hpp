#pragma once

// Meta loop for model-based RL with pluggable model fitting (maximum
// likelihood, value moment matching with absolute or signed loss) and policy
// computation (disadvantage minimization on nu, or full planning).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lamps/decomposition.hpp"
#include "lamps/online.hpp"
#include "lamps/table.hpp"
#include "lamps/tabular.hpp"

namespace lamps {

enum class FitVariant { mle, moment_match_abs, moment_match_signed };
enum class PolicyVariant { lazy_disadvantage, full_planning };
enum class FiniteLearner { ftl, hedge };

/// Either a finite list of candidate models or the unconstrained tabular class.
class ModelClass {
 public:
  static ModelClass finite(std::vector<TransitionModel> candidates);
  static ModelClass tabular(int num_states, int num_actions);

  bool is_finite() const { return !candidates_.empty(); }
  const std::vector<TransitionModel>& candidates() const { return candidates_; }
  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }

 private:
  ModelClass(std::vector<TransitionModel> candidates, int num_states, int num_actions);

  std::vector<TransitionModel> candidates_;
  int num_states_;
  int num_actions_;
};

/// Floor applied to model probabilities inside the log-likelihood.
inline constexpr double kLogProbFloor = 1e-12;

/// Mean negative log-likelihood of the tuples under `model`.
double mle_loss(const TransitionModel& model, std::span<const Transition> data);

/// Value-moment loss of `model` against frozen successor values.
/// abs:    mean |V(s') - E_{M(s,a)} V|
/// signed: mean over learned tuples of (V(s') - E_M V) plus mean over
///         exploration tuples of (E_M V - V(s')).
double moment_match_loss(const TransitionModel& model, std::span<const Transition> data,
                         const VectorXd& frozen_values, FitVariant variant);

/// Round loss of `model` for the given fit variant (`frozen_values` unused for
/// mle).
double round_loss(const TransitionModel& model, std::span<const Transition> data,
                  const VectorXd& frozen_values, FitVariant variant);

/// Maximum-likelihood fit on all partitions. Finite class: Follow-the-Leader
/// over per-round mean NLL. Tabular class: counts with add-`alpha` smoothing
/// (unvisited pairs come out uniform).
TransitionModel fit_model_mle(const TransitionDataset& data, const ModelClass& model_class,
                              double laplace_alpha = 1.0);

struct MomentMatchOptions {
  FitVariant variant = FitVariant::moment_match_abs;
  double reg_strength = 1e-3;
  FtrlOptions ftrl = {1.0, 200, {}};
  std::optional<TransitionModel> warm_start;  // tabular class only
};

struct MomentMatchFit {
  TransitionModel model;
  std::optional<std::size_t> index;  // finite class only
  double cumulative_loss = 0.0;
};

/// Value-moment fit on all partitions; partition t is scored against its own
/// frozen value vector frozen_values[t]. Finite class: Follow-the-Leader on
/// the cumulative loss. Tabular class: FTRL over row-stochastic kernels
/// (projected gradient descent; gradients flow only through the model).
MomentMatchFit fit_model_moment_match(const TransitionDataset& data,
                                      const ModelClass& model_class,
                                      std::span<const VectorXd> frozen_values,
                                      const MomentMatchOptions& options = {});

/// Euclidean projection of each length-`width` block onto the simplex.
void project_rows_to_simplex(VectorXd& flat, int width);

struct LazyPolicyResult {
  Policy policy;
  double disadvantage = 0.0;  // exact nu-disadvantage of `policy` in the model
  int sweeps = 0;
  bool converged = false;
};

/// Policy improvement restricted to states in the support of nu's state
/// marginal, re-evaluating Q between sweeps, until the nu-disadvantage is at
/// most eps_po or max_sweeps is reached. States outside the support keep
/// their action distribution from `initial`.
LazyPolicyResult compute_policy_lazy(const TabularMdp& mdp, const TransitionModel& model_hat,
                                     const ExplorationDistribution& nu, double eps_po,
                                     int max_sweeps, const Policy& initial);

/// Optimal planning in the model to accuracy eps_oc.
PlanResult compute_policy_planning(const TabularMdp& mdp, const TransitionModel& model_hat,
                                   double eps_oc);

struct MbrlConfig {
  int iterations = 16;
  std::size_t samples_per_iter = 100;
  double eps_po = 1e-6;
  double eps_oc = 1e-8;
  FitVariant fit_variant = FitVariant::mle;
  PolicyVariant policy_variant = PolicyVariant::lazy_disadvantage;
  std::uint64_t rng_seed = 0;
  int max_sweeps = 100;
  double laplace_alpha = 1.0;
  FiniteLearner finite_learner = FiniteLearner::ftl;
  double hedge_beta = 0.9;
  /// Divisor mapping raw losses into [0, 1] for Hedge; 0 selects the running
  /// max of observed losses.
  double hedge_loss_scale = 0.0;
  double mm_reg_strength = 1e-3;
  FtrlOptions mm_ftrl = {1.0, 200, {}};
};

struct IterationMetrics {
  int iteration = 0;
  double real_performance = 0.0;  // J_{M*}(pi_t)
  double model_loss = 0.0;        // fit-variant loss of M_t on D_t
  double disadvantage = 0.0;      // nu-disadvantage of pi_t in M_t
  int planner_calls = 0;          // sweeps spent computing pi_t
  double v_hat_max = 0.0;         // ||V^{pi_t}_{M_t}||_inf
  double v_max = 0.0;             // ||V^{pi*}_{M_t}||_inf
};

struct MetaLoopResult {
  std::vector<IterationMetrics> metrics;
  std::vector<Policy> policies;         // pi_1 .. pi_{T+1}
  std::vector<TransitionModel> models;  // M_1 .. M_{T+1}
  /// Per-iteration bound check: disadvantage bound for the lazy variant,
  /// total-variation bound (eps_oc measured) for full planning.
  std::vector<BoundReport> bounds;
  std::vector<bool> policy_converged;
  double expert_performance = 0.0;  // J_{M*}(pi*)
  // Finite classes only.
  std::vector<std::size_t> selected;                    // index of M_t
  LossLedger raw_losses;                                // l_t(M) per candidate
  std::vector<std::vector<double>> normalized_losses;   // Hedge inputs
  std::vector<VectorXd> hedge_weights;  // initial, then after every update
  TransitionDataset data;

  double average_regret() const;
};

/// Runs T rounds of: collect data with pi_t and nu, fit M_{t+1}, compute
/// pi_{t+1}. Reproducible for a fixed config.rng_seed.
MetaLoopResult run_meta_loop(const TabularMdp& mdp, const ModelClass& model_class,
                             const ExplorationDistribution& nu, const MbrlConfig& config);

inline constexpr const char* kMetricsColumns[] = {
    "iteration", "real_performance", "model_loss", "disadvantage",
    "planner_calls", "v_hat_max", "v_max"};

Table metrics_table(std::span<const IterationMetrics> metrics);
std::string metrics_csv(std::span<const IterationMetrics> metrics);
/// One JSON object per line with the CSV column names as keys.
std::string metrics_jsonl(std::span<const IterationMetrics> metrics);

}  // namespace lamps
