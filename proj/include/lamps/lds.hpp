#pragma once

// Finite-horizon linear system x_{t+1} = A_t x_t + B u_t with cost
// sum_t u_t' R u_t + x_H' Q_H x_H (no intermediate state cost), fitted by a
// time-invariant linear model class.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "lamps/table.hpp"

namespace lamps {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// True dynamics: A_t = a_even for even t, a_odd for odd t.
struct LdsTruth {
  MatrixXd a_even;
  MatrixXd a_odd;
  MatrixXd b;
  int horizon = 100;
  VectorXd initial_state;
  MatrixXd terminal_q;
  MatrixXd control_r;

  const MatrixXd& a_at(int t) const { return t % 2 == 0 ? a_even : a_odd; }
  int state_dim() const { return static_cast<int>(b.rows()); }
  int control_dim() const { return static_cast<int>(b.cols()); }

  /// Alternating 0.5 I / 1.5 I dynamics, B = ones, x_0 = ones, H = 100,
  /// Q_H = I, R = I.
  static LdsTruth alternating(int state_dim = 2, int horizon = 100);
  /// Same cost and start, with A_t = a for every t.
  static LdsTruth time_invariant(MatrixXd a, MatrixXd b, int horizon = 100);

  void validate() const;
};

struct LdsModel {
  MatrixXd a;
  MatrixXd b;

  /// [vec(a); vec(b)] in column-major order.
  VectorXd flatten() const;
  static LdsModel unflatten(const VectorXd& params, int state_dim, int control_dim);
};

/// Cost-to-go x' P_t x and feedback u_t = -K_t x_t.
struct RiccatiSolution {
  std::vector<MatrixXd> p;  // H + 1 entries; p[H] = Q_H
  std::vector<MatrixXd> k;  // H entries
};

/// Backward recursion for a time-invariant model. Throws if control_r is not
/// positive definite.
RiccatiSolution riccati_solve(const LdsModel& model, int horizon, const MatrixXd& terminal_q,
                              const MatrixXd& control_r);
/// Time-varying variant: a_at(t) gives the state matrix used at step t.
RiccatiSolution riccati_solve(const std::function<const MatrixXd&(int)>& a_at,
                              const MatrixXd& b, int horizon, const MatrixXd& terminal_q,
                              const MatrixXd& control_r);

struct LdsRollout {
  std::vector<VectorXd> states;    // x_0 .. x_H
  std::vector<VectorXd> controls;  // u_0 .. u_{H-1}
  double cost = 0.0;
};

/// Runs u_t = -K_t x_t in the true system from its initial state.
LdsRollout simulate_closed_loop(const LdsTruth& truth, const RiccatiSolution& controller);

/// Optimal controller for the true time-varying dynamics.
RiccatiSolution expert_controller(const LdsTruth& truth);

struct LdsTuple {
  int step = 0;
  VectorXd x;
  VectorXd u;
  VectorXd x_next;
};

/// Mean ||x' - (A x + B u)||^2. When `grad` is given it receives the gradient
/// with respect to (A, B).
double lds_mle_loss(const LdsModel& model, std::span<const LdsTuple> data,
                    LdsModel* grad = nullptr);

/// Mean (x'^T P x' - y^T P y)^2 with y = A x + B u and P = values.p[step + 1]
/// held fixed. Throws std::out_of_range if a tuple's step is outside the
/// value horizon.
double lds_mm_loss(const LdsModel& model, std::span<const LdsTuple> data,
                   const RiccatiSolution& values, LdsModel* grad = nullptr);

struct LdsExperimentConfig {
  int iterations = 30;
  std::size_t samples_per_iter = 100;
  double step_size = 1e-3;
  int step_budget = 500;
  double reg_strength = 1e-4;
  std::uint64_t rng_seed = 0;
  /// Defaults to A = I, B = column of ones.
  std::optional<LdsModel> initial_model;
};

struct LdsIteration {
  int iteration = 0;
  double cost_mle = 0.0;  // true cost of the controller of the current fit
  double cost_mm = 0.0;
  double cost_expert = 0.0;
  double loss_mle = 0.0;  // loss of the current fit on the round's fresh data
  double loss_mm = 0.0;
  double terminal_norm_mle = 0.0;  // ||x_H|| of the closed-loop rollout
  double terminal_norm_mm = 0.0;
};

struct LdsTrace {
  std::vector<LdsIteration> rows;
  LdsModel final_mle;
  LdsModel final_mm;
  bool diverged_mle = false;
  bool diverged_mm = false;

  /// Columns iteration, cost_mle, cost_mm, cost_expert, loss_mle, loss_mm.
  Table table() const;
};

/// Each iteration: roll out the current fit's controller in the true system,
/// draw samples (fair coin between that rollout and the expert trajectory, at
/// uniform time steps), then refit by FTRL on the summed per-round losses.
LdsTrace run_lds_experiment(const LdsTruth& truth, const LdsExperimentConfig& config);

/// First 1-based index with cost <= (1 + rel_tol) * expert, or costs.size() + 1
/// if never reached.
int iterations_to_reach(std::span<const double> costs, double expert, double rel_tol);

}  // namespace lamps
