#pragma once

// No-regret online learners used by the model-fitting steps.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace lamps {

using Eigen::VectorXd;

/// Multiplicative-weights state. Update rule: w_i <- w_i * beta^{loss_i},
/// then renormalize.
struct HedgeState {
  VectorXd weights;
  double beta = 0.9;

  static HedgeState uniform(std::size_t num_experts, double beta = 0.9);
};

/// beta = 1 / (1 + sqrt(2 ln N / T)): with it the regret over T rounds is at
/// most sqrt(2 T ln N) + ln N.
double hedge_beta_for_horizon(std::size_t horizon, std::size_t num_experts);

/// Losses must lie in [0, 1]; throws std::invalid_argument otherwise.
HedgeState hedge_update(const HedgeState& state, std::span<const double> losses);

/// Per-round loss vectors (one entry per candidate) with running totals.
class LossLedger {
 public:
  explicit LossLedger(std::size_t num_candidates = 0);

  void record(std::span<const double> losses);

  std::size_t num_candidates() const { return static_cast<std::size_t>(cumulative_.size()); }
  std::size_t num_rounds() const { return per_round_.size(); }
  const std::vector<VectorXd>& per_round() const { return per_round_; }
  const VectorXd& cumulative() const { return cumulative_; }

 private:
  std::vector<VectorXd> per_round_;
  VectorXd cumulative_;
};

/// Follow-the-Leader: index of the smallest cumulative loss, lowest index on
/// ties. Throws on an empty candidate set.
std::size_t ftl_argmin(std::span<const double> cumulative);
std::size_t ftl_argmin(const LossLedger& ledger);

/// Follow-the-Leader over an explicit class, with losses produced by
/// `loss(candidate, round)` for rounds [0, num_rounds).
template <typename Candidate, typename LossFn>
std::size_t ftl_argmin(std::span<const Candidate> candidates, std::size_t num_rounds,
                       LossFn&& loss) {
  std::vector<double> totals(candidates.size(), 0.0);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t r = 0; r < num_rounds; ++r) totals[i] += loss(candidates[i], r);
  }
  return ftl_argmin(std::span<const double>(totals));
}

/// Cumulative loss oracle: returns the loss at theta and writes its gradient.
using CumulativeLoss = std::function<double(const VectorXd& theta, VectorXd& grad)>;
/// Optional feasibility projection applied after every gradient step.
using Projection = std::function<void(VectorXd& theta)>;

struct FtrlOptions {
  double step_size = 1e-2;
  int step_budget = 500;
  Projection projection = {};
};

struct FtrlResult {
  VectorXd params;
  double objective = 0.0;  // cumulative loss + (reg/2)||params||^2
  int accepted_steps = 0;
};

/// Approximately solves argmin_theta L(theta) + (reg_strength/2)||theta||^2 by
/// gradient descent warm-started at `params`. A step that would raise the
/// objective is retried at half the step size, so the objective is
/// nonincreasing. Throws on non-finite gradients or reg_strength <= 0.
FtrlResult ftrl_step(const VectorXd& params, const CumulativeLoss& loss,
                     double reg_strength, const FtrlOptions& options = {});

/// Running-max normalizer mapping raw losses into [0, 1] for Hedge. Signed
/// losses are mapped affinely from [-m, m] to [0, 1].
class LossNormalizer {
 public:
  explicit LossNormalizer(bool signed_losses = false) : signed_(signed_losses) {}

  std::vector<double> normalize(std::span<const double> raw);
  double scale() const { return max_abs_; }

 private:
  bool signed_;
  double max_abs_ = 0.0;
};

}  // namespace lamps
