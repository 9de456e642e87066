#pragma once

// Finite-horizon trajectory optimization for parameterized nonlinear systems:
// iLQR run to convergence, and a single LQR backward pass along a desired
// trajectory. Both report how many backward passes they spent.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "lamps/table.hpp"

namespace lamps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Next state as a function of (state, control, parameters).
using DynamicsFn = std::function<VectorXd(const VectorXd&, const VectorXd&, const VectorXd&)>;
/// Writes d f / d x and d f / d u at (state, control, parameters).
using JacobianFn = std::function<void(const VectorXd&, const VectorXd&, const VectorXd&,
                                      MatrixXd& fx, MatrixXd& fu)>;
/// For systems linear in the parameters: f(x, u; theta) = offset + features * theta.
using FeatureFn = std::function<void(const VectorXd&, const VectorXd&, MatrixXd& features,
                                     VectorXd& offset)>;

/// Cost sum_{h<H} x'Qx + u'Ru + x_H' Q_H x_H.
struct NonlinearSystem {
  int state_dim = 0;
  int control_dim = 0;
  DynamicsFn dynamics;
  JacobianFn jacobian;  // optional; central differences when empty
  FeatureFn features;   // optional; required for least-squares fitting
  VectorXd true_theta;
  int horizon = 0;
  MatrixXd q;
  MatrixXd r;
  MatrixXd q_terminal;
  VectorXd initial_state;

  void validate() const;
  VectorXd step(const VectorXd& x, const VectorXd& u, const VectorXd& theta) const;
  void linearize(const VectorXd& x, const VectorXd& u, const VectorXd& theta, MatrixXd& fx,
                 MatrixXd& fu) const;
  double stage_cost(const VectorXd& x, const VectorXd& u) const;
  double terminal_cost(const VectorXd& x) const;

  /// Damped pendulum measured from upright, explicit Euler with step dt:
  /// angle' = angle + dt * rate,
  /// rate'  = rate + dt * (theta0 sin(angle) + theta1 u - theta2 rate).
  static NonlinearSystem pendulum(int horizon = 50, double dt = 0.05);
  /// x' = A x + B u (parameters ignored).
  static NonlinearSystem linear(MatrixXd a, MatrixXd b, MatrixXd q, MatrixXd r,
                                MatrixXd q_terminal, int horizon, VectorXd initial_state);
};

/// Time-varying affine feedback u_h = controls[h] + gains[h] (x - states[h]).
struct TrajectoryPolicy {
  std::vector<VectorXd> states;    // H + 1 nominal states
  std::vector<VectorXd> controls;  // H nominal controls
  std::vector<MatrixXd> gains;     // H feedback gains

  VectorXd act(int h, const VectorXd& x) const;
  int horizon() const { return static_cast<int>(controls.size()); }
};

struct PlannerStats {
  int backward_passes = 0;
  int forward_passes = 0;

  PlannerStats& operator+=(const PlannerStats& other);
};

struct PlannerResult {
  TrajectoryPolicy policy;
  PlannerStats stats;
  double cost = 0.0;  // nominal trajectory cost in the planning model
  int iterations = 0;
};

/// Trajectory of H steps built by applying `controls` open loop from the
/// system's initial state.
TrajectoryPolicy open_loop_trajectory(const NonlinearSystem& system, const VectorXd& theta,
                                      std::vector<VectorXd> controls);

/// iLQR with Levenberg regularization on the value Hessian (x10 on a rejected
/// step) and a backtracking line search. Stops once an iteration improves the
/// cost by less than conv_tol, or after max_iters. Throws std::runtime_error
/// on a non-finite cost.
PlannerResult ilqr_full(const VectorXd& theta, const NonlinearSystem& system,
                        const std::vector<VectorXd>& initial_controls, double conv_tol = 1e-9,
                        int max_iters = 100);

/// One LQR backward pass on the model linearized along `desired`, which need
/// not be feasible under the model.
PlannerResult lazy_backward_pass(const VectorXd& theta, const NonlinearSystem& system,
                                 const TrajectoryPolicy& desired);

/// Noise-free cost of running `policy` from the system's initial state in the
/// model.
double rollout_cost(const NonlinearSystem& system, const VectorXd& theta,
                    const TrajectoryPolicy& policy);

/// Value of following `policy` from state x at step h in the model.
double policy_value(const NonlinearSystem& system, const VectorXd& theta,
                    const TrajectoryPolicy& policy, int h, const VectorXd& x);

/// V(x) - min_u Q(x, u) at step h, with min_u taken from a second-order
/// expansion of Q in u around the policy's action (central differences).
double local_disadvantage(const NonlinearSystem& system, const VectorXd& theta,
                          const TrajectoryPolicy& policy, int h, const VectorXd& x);

struct StateSample {
  int step = 0;
  VectorXd state;
};

/// Mean local disadvantage over the given states.
double mean_local_disadvantage(const NonlinearSystem& system, const VectorXd& theta,
                               const TrajectoryPolicy& policy,
                               const std::vector<StateSample>& states);

struct IlqrTransition {
  VectorXd x;
  VectorXd u;
  VectorXd x_next;
};

/// Minimizer of sum_rounds mean ||x' - f(x,u;theta)||^2 + (reg/2)||theta||^2
/// for systems with a feature map (exact normal-equations solve).
VectorXd fit_theta_least_squares(const NonlinearSystem& system,
                                 const std::vector<std::vector<IlqrTransition>>& rounds,
                                 double reg_strength);

struct IlqrExperimentConfig {
  int iterations = 20;
  std::size_t samples_per_iter = 100;
  double process_noise_std = 0.01;
  double nu_state_std = 0.05;    // perturbation of the desired states
  double nu_control_std = 0.1;   // perturbation of the desired controls
  double reg_strength = 1e-8;
  double conv_tol = 1e-9;
  int max_ilqr_iters = 100;
  std::uint64_t rng_seed = 0;
  VectorXd initial_theta;        // defaults to (5, 2, 0.5)
};

struct IlqrIteration {
  int iteration = 0;
  double real_cost_lazy = 0.0;        // noise-free cost in the true system
  double real_cost_full = 0.0;
  int backward_passes_lazy = 0;       // cumulative
  int backward_passes_full = 0;       // cumulative
  double j_pihat_in_model = 0.0;      // lazy policy in its own model
  double j_expert_in_model = 0.0;     // expert policy in the lazy model
  double j_pihat_in_model_full = 0.0;
  double j_expert_in_model_full = 0.0;
  double disadvantage_lazy = 0.0;     // mean local disadvantage on nu states
};

struct IlqrTrace {
  std::vector<IlqrIteration> rows;
  double expert_cost = 0.0;  // noise-free expert cost in the true system
  VectorXd final_theta_lazy;
  VectorXd final_theta_full;

  /// Columns iteration, real_cost_lazy, real_cost_full, backward_passes_lazy,
  /// backward_passes_full, j_pihat_in_model, j_expert_in_model.
  Table table() const;
};

/// Desired trajectory that holds the origin with zero control.
TrajectoryPolicy hold_trajectory(const NonlinearSystem& system);

/// Model-based loop on `system` with least-squares parameter fitting; the lazy
/// run computes each policy with one backward pass along `desired`, the full
/// run with iLQR to convergence. Both runs see the same data budget.
IlqrTrace run_ilqr_experiment(const NonlinearSystem& system, const TrajectoryPolicy& desired,
                              const IlqrExperimentConfig& config);

}  // namespace lamps
