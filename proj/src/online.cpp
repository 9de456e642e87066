#include "lamps/online.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lamps {

HedgeState HedgeState::uniform(std::size_t num_experts, double beta) {
  if (num_experts == 0) throw std::invalid_argument("Hedge: no experts");
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("Hedge: beta must lie in (0, 1)");
  return {VectorXd::Constant(static_cast<Eigen::Index>(num_experts),
                             1.0 / static_cast<double>(num_experts)),
          beta};
}

double hedge_beta_for_horizon(std::size_t horizon, std::size_t num_experts) {
  if (horizon == 0 || num_experts < 2) {
    throw std::invalid_argument("hedge_beta_for_horizon: need T >= 1 and N >= 2");
  }
  const double rate = std::sqrt(2.0 * std::log(static_cast<double>(num_experts)) /
                                static_cast<double>(horizon));
  return 1.0 / (1.0 + rate);
}

HedgeState hedge_update(const HedgeState& state, std::span<const double> losses) {
  if (static_cast<Eigen::Index>(losses.size()) != state.weights.size()) {
    throw std::invalid_argument("hedge_update: one loss per expert required");
  }
  HedgeState next = state;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!(losses[i] >= 0.0 && losses[i] <= 1.0)) {
      throw std::invalid_argument("hedge_update: loss " + std::to_string(losses[i]) +
                                  " outside [0, 1]");
    }
    next.weights(static_cast<Eigen::Index>(i)) *= std::pow(state.beta, losses[i]);
  }
  next.weights /= next.weights.sum();
  return next;
}

LossLedger::LossLedger(std::size_t num_candidates)
    : cumulative_(VectorXd::Zero(static_cast<Eigen::Index>(num_candidates))) {}

void LossLedger::record(std::span<const double> losses) {
  if (per_round_.empty() && cumulative_.size() == 0) {
    cumulative_ = VectorXd::Zero(static_cast<Eigen::Index>(losses.size()));
  }
  if (static_cast<Eigen::Index>(losses.size()) != cumulative_.size()) {
    throw std::invalid_argument("LossLedger: loss vector length changed");
  }
  VectorXd round = Eigen::Map<const VectorXd>(losses.data(), cumulative_.size());
  cumulative_ += round;
  per_round_.push_back(std::move(round));
}

std::size_t ftl_argmin(std::span<const double> cumulative) {
  if (cumulative.empty()) throw std::invalid_argument("ftl_argmin: empty model class");
  return static_cast<std::size_t>(
      std::min_element(cumulative.begin(), cumulative.end()) - cumulative.begin());
}

std::size_t ftl_argmin(const LossLedger& ledger) {
  const VectorXd& c = ledger.cumulative();
  return ftl_argmin(std::span<const double>(c.data(), static_cast<std::size_t>(c.size())));
}

FtrlResult ftrl_step(const VectorXd& params, const CumulativeLoss& loss,
                     double reg_strength, const FtrlOptions& options) {
  if (!(reg_strength > 0.0)) throw std::invalid_argument("ftrl_step: reg_strength must be positive");
  if (!(options.step_size > 0.0)) throw std::invalid_argument("ftrl_step: step size must be positive");

  auto objective = [&](const VectorXd& theta, VectorXd& grad) {
    grad = VectorXd::Zero(theta.size());
    const double value = loss(theta, grad);
    if (!grad.allFinite() || !std::isfinite(value)) {
      throw std::runtime_error("ftrl_step: non-finite loss or gradient");
    }
    grad += reg_strength * theta;
    return value + 0.5 * reg_strength * theta.squaredNorm();
  };

  VectorXd theta = params;
  if (options.projection) options.projection(theta);
  VectorXd grad;
  double current = objective(theta, grad);
  int accepted = 0;
  double step = options.step_size;
  VectorXd trial_grad;
  for (int it = 0; it < options.step_budget; ++it) {
    bool moved = false;
    // Halve until the objective does not increase; give up after 30 halvings.
    for (int halving = 0; halving < 30; ++halving) {
      VectorXd trial = theta - step * grad;
      if (options.projection) options.projection(trial);
      const double value = objective(trial, trial_grad);
      if (value <= current) {
        theta = std::move(trial);
        grad = trial_grad;
        current = value;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
    ++accepted;
  }
  return {std::move(theta), current, accepted};
}

std::vector<double> LossNormalizer::normalize(std::span<const double> raw) {
  for (double x : raw) {
    if (!std::isfinite(x)) throw std::invalid_argument("LossNormalizer: non-finite loss");
    if (!signed_ && x < 0.0) throw std::invalid_argument("LossNormalizer: negative loss");
    max_abs_ = std::max(max_abs_, std::abs(x));
  }
  std::vector<double> out(raw.size(), signed_ ? 0.5 : 0.0);
  if (max_abs_ == 0.0) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double r = raw[i] / max_abs_;
    out[i] = signed_ ? 0.5 * (r + 1.0) : r;
  }
  return out;
}

}  // namespace lamps
