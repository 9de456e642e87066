#pragma once

// Exact finite-MDP machinery: dynamics tables, policies, values, occupancy
// measures and transition sampling. Costs are minimized throughout.

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "lamps/rng.hpp"

namespace lamps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Tolerance on probability-vector sums accepted at construction.
inline constexpr double kProbTolerance = 1e-12;

/// Categorical dynamics M(s'|s,a). Row `s * num_actions + a` of the kernel is
/// the next-state distribution for (s, a).
class TransitionModel {
 public:
  TransitionModel(int num_states, int num_actions, MatrixXd kernel);

  static TransitionModel uniform(int num_states, int num_actions);
  /// next[s * num_actions + a] is the unique successor of (s, a).
  static TransitionModel deterministic(int num_states, int num_actions,
                                       std::span<const int> next);

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  const MatrixXd& kernel() const { return kernel_; }

  int row_index(int s, int a) const { return s * num_actions_ + a; }
  auto row(int s, int a) const { return kernel_.row(row_index(s, a)); }
  double prob(int s, int a, int next) const {
    return kernel_(row_index(s, a), next);
  }

  /// E_{s'~M(s,a)}[values(s')] for every (s, a), shaped (S, A).
  MatrixXd expected_next(const VectorXd& values) const;
  /// ||M(s,a) - other(s,a)||_1 for every (s, a), shaped (S, A).
  MatrixXd l1_distance(const TransitionModel& other) const;

  bool operator==(const TransitionModel& other) const = default;

 private:
  int num_states_;
  int num_actions_;
  MatrixXd kernel_;
};

/// Stochastic stationary policy, pi(a|s) stored as an (S, A) table.
class Policy {
 public:
  explicit Policy(MatrixXd action_dist);

  static Policy uniform(int num_states, int num_actions);
  static Policy deterministic(int num_actions, std::span<const int> actions);

  int num_states() const { return static_cast<int>(dist_.rows()); }
  int num_actions() const { return static_cast<int>(dist_.cols()); }
  const MatrixXd& action_dist() const { return dist_; }
  double prob(int s, int a) const { return dist_(s, a); }

  bool is_deterministic() const;
  /// Most probable action at s (lowest index on ties).
  int mode(int s) const;

  bool operator==(const Policy& other) const = default;

 private:
  MatrixXd dist_;
};

/// Infinite-horizon discounted MDP (S, A, M*, omega, c, gamma).
class TabularMdp {
 public:
  TabularMdp(MatrixXd cost, double discount, VectorXd initial_dist,
             TransitionModel dynamics);

  int num_states() const { return dynamics_.num_states(); }
  int num_actions() const { return dynamics_.num_actions(); }
  const MatrixXd& cost() const { return cost_; }
  double discount() const { return discount_; }
  const VectorXd& initial_dist() const { return initial_dist_; }
  const TransitionModel& dynamics() const { return dynamics_; }

 private:
  MatrixXd cost_;
  double discount_;
  VectorXd initial_dist_;
  TransitionModel dynamics_;
};

struct ValueTable {
  VectorXd v;
  MatrixXd q;
};

struct OccupancyMeasure {
  MatrixXd state_action;  // D_{omega,pi}(s, a)
  VectorXd state_only;    // d_{omega,pi}(s)
};

/// State-action exploration distribution nu.
class ExplorationDistribution {
 public:
  explicit ExplorationDistribution(MatrixXd weights);

  static ExplorationDistribution uniform(int num_states, int num_actions);

  const MatrixXd& weights() const { return weights_; }
  VectorXd state_marginal() const { return weights_.rowwise().sum(); }

 private:
  MatrixXd weights_;
};

/// Exact V^pi_M and Q^pi_M by a dense LU solve of V = c_pi + gamma P_pi V.
ValueTable evaluate_policy(const TabularMdp& mdp, const TransitionModel& model,
                           const Policy& policy);

/// Normalized discounted occupancy D_{omega,pi} under `model`.
OccupancyMeasure occupancy(const TabularMdp& mdp, const TransitionModel& model,
                           const Policy& policy);

/// J^omega_M(pi) = E_{s~omega} V^pi_M(s).
double performance(const TabularMdp& mdp, const TransitionModel& model,
                   const Policy& policy);

/// Deterministic policy greedy w.r.t. q (argmin, lowest index on ties).
Policy greedy_policy(const MatrixXd& q);

/// max_s |v(s) - min_a q(s,a)| for the given value table.
double bellman_optimality_residual(const ValueTable& values);

struct PlanResult {
  Policy policy;
  ValueTable values;
  int sweeps = 0;  // Bellman backups over the full state space
};

/// Value iteration to `tol`, greedy extraction, then exact policy-iteration
/// polishing until the greedy policy is stable.
PlanResult plan_optimal(const TabularMdp& mdp, const TransitionModel& model,
                        double tol = 1e-10);

Policy optimal_policy(const TabularMdp& mdp, const TransitionModel& model,
                      double tol = 1e-10);

enum class Source : std::uint8_t { learned, exploration };

struct Transition {
  int state;
  int action;
  int next_state;
  Source source;

  bool operator==(const Transition&) const = default;
};

/// Aggregated transition tuples, partitioned by collection round.
class TransitionDataset {
 public:
  TransitionDataset() = default;

  void append_partition(std::span<const Transition> tuples);
  void append(const TransitionDataset& other);

  std::size_t size() const { return tuples_.size(); }
  bool empty() const { return tuples_.empty(); }
  std::size_t num_partitions() const { return partition_ends_.size(); }
  std::span<const Transition> all() const { return tuples_; }
  std::span<const Transition> partition(std::size_t index) const;

  bool operator==(const TransitionDataset&) const = default;

 private:
  std::vector<Transition> tuples_;
  std::vector<std::size_t> partition_ends_;
};

/// Draws n tuples in M*. Each tuple flips a fair coin: heads rolls out `policy`
/// from omega with geometric(1 - gamma) termination (an exact draw from
/// D_{omega,pi}); tails draws (s, a) from nu. Returns a single partition.
TransitionDataset sample_transitions(const TabularMdp& mdp,
                                     const Policy& policy,
                                     const ExplorationDistribution& nu,
                                     std::size_t n, std::uint64_t rng_seed);

// Random instances for experiments and property checks.
TransitionModel random_model(int num_states, int num_actions, Rng& rng);
Policy random_policy(int num_states, int num_actions, Rng& rng);
TabularMdp random_mdp(int num_states, int num_actions, double discount,
                      Rng& rng);
ExplorationDistribution random_exploration(int num_states, int num_actions,
                                           Rng& rng);

}  // namespace lamps
