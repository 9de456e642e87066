#include "lamps/decomposition.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lamps {
namespace {

double find_named(const std::vector<NamedValue>& values, std::string_view name) {
  for (const auto& nv : values) {
    if (nv.name == name) return nv.value;
  }
  throw std::out_of_range("no entry named " + std::string(name));
}

DecompositionReport make_report(double lhs, std::vector<NamedValue> terms) {
  DecompositionReport report{lhs, std::move(terms), 0.0};
  report.residual = std::abs(lhs - report.sum_terms());
  return report;
}

// sum_{s,a} weight(s,a) [E_{M_from(s,a)} v - E_{M_to(s,a)} v]
double weighted_successor_gap(const MatrixXd& weight, const TransitionModel& from,
                              const TransitionModel& to, const VectorXd& v) {
  return weight.cwiseProduct(from.expected_next(v) - to.expected_next(v)).sum();
}

}  // namespace

double DecompositionReport::term(std::string_view name) const {
  return find_named(terms, name);
}

double DecompositionReport::sum_terms() const {
  double total = 0.0;
  for (const auto& t : terms) total += t.value;
  return total;
}

double BoundReport::component(std::string_view name) const {
  return find_named(components, name);
}

DecompositionReport simulation_lemma(const TabularMdp& mdp,
                                     const TransitionModel& model_hat,
                                     const Policy& policy) {
  const TransitionModel& truth = mdp.dynamics();
  const double gamma = mdp.discount();
  const ValueTable v_hat = evaluate_policy(mdp, model_hat, policy);
  const double lhs = performance(mdp, truth, policy) -
                     mdp.initial_dist().dot(v_hat.v);
  const OccupancyMeasure occ = occupancy(mdp, truth, policy);
  const double term = gamma / (1.0 - gamma) *
                      weighted_successor_gap(occ.state_action, truth, model_hat, v_hat.v);
  return make_report(lhs, {{std::string(terms::kSuccessorValueGap), term}});
}

DecompositionReport pdpm_decomposition(const TabularMdp& mdp,
                                       const TransitionModel& model_hat,
                                       const Policy& policy_hat,
                                       const Policy& policy_star) {
  const TransitionModel& truth = mdp.dynamics();
  const double gamma = mdp.discount();
  const VectorXd& omega = mdp.initial_dist();

  const double lhs = (1.0 - gamma) * (performance(mdp, truth, policy_hat) -
                                      performance(mdp, truth, policy_star));
  const ValueTable hat_hat = evaluate_policy(mdp, model_hat, policy_hat);
  const ValueTable hat_star = evaluate_policy(mdp, model_hat, policy_star);
  const OccupancyMeasure occ_hat = occupancy(mdp, truth, policy_hat);
  const OccupancyMeasure occ_star = occupancy(mdp, truth, policy_star);

  const double in_model = (1.0 - gamma) * omega.dot(hat_hat.v - hat_star.v);
  const double learned =
      gamma * weighted_successor_gap(occ_hat.state_action, truth, model_hat, hat_hat.v);
  const double expert =
      gamma * weighted_successor_gap(occ_star.state_action, model_hat, truth, hat_star.v);
  return make_report(lhs, {{std::string(terms::kInModelDiff), in_model},
                           {std::string(terms::kValueDiffLearned), learned},
                           {std::string(terms::kValueDiffExpert), expert}});
}

DecompositionReport pdam_decomposition(const TabularMdp& mdp,
                                       const TransitionModel& model_hat,
                                       const Policy& policy_hat,
                                       const Policy& policy_star) {
  const TransitionModel& truth = mdp.dynamics();
  const double gamma = mdp.discount();

  const double lhs = (1.0 - gamma) * (performance(mdp, truth, policy_hat) -
                                      performance(mdp, truth, policy_star));
  const ValueTable hat_hat = evaluate_policy(mdp, model_hat, policy_hat);
  const OccupancyMeasure occ_hat = occupancy(mdp, truth, policy_hat);
  const OccupancyMeasure occ_star = occupancy(mdp, truth, policy_star);

  // V(s) - E_{a~pi*(s)} Q(s,a), weighted by d_{omega,pi*}.
  const VectorXd expert_q =
      hat_hat.q.cwiseProduct(policy_star.action_dist()).rowwise().sum();
  const double disadvantage = occ_star.state_only.dot(hat_hat.v - expert_q);
  const double learned =
      gamma * weighted_successor_gap(occ_hat.state_action, truth, model_hat, hat_hat.v);
  const double expert =
      gamma * weighted_successor_gap(occ_star.state_action, model_hat, truth, hat_hat.v);
  return make_report(lhs, {{std::string(terms::kExpertDisadvantage), disadvantage},
                           {std::string(terms::kValueDiffLearned), learned},
                           {std::string(terms::kValueDiffExpert), expert}});
}

DecompositionReport unscaled(const DecompositionReport& report, double discount) {
  const double scale = 1.0 / (1.0 - discount);
  std::vector<NamedValue> terms = report.terms;
  for (auto& t : terms) t.value *= scale;
  return make_report(report.lhs * scale, std::move(terms));
}

double coverage_coefficient(const ExplorationDistribution& nu,
                            const OccupancyMeasure& occ_star) {
  const MatrixXd& d = occ_star.state_action;
  const MatrixXd& w = nu.weights();
  if (d.rows() != w.rows() || d.cols() != w.cols()) {
    throw std::invalid_argument("coverage_coefficient: shape mismatch");
  }
  double best = 0.0;
  for (Eigen::Index s = 0; s < d.rows(); ++s) {
    for (Eigen::Index a = 0; a < d.cols(); ++a) {
      if (d(s, a) <= 0.0) continue;
      if (w(s, a) <= 0.0) return std::numeric_limits<double>::infinity();
      best = std::max(best, d(s, a) / w(s, a));
    }
  }
  return best;
}

double optimality_gap(const TabularMdp& mdp, const TransitionModel& model,
                      const Policy& policy) {
  const PlanResult best = plan_optimal(mdp, model);
  const double gap = performance(mdp, model, policy) -
                     mdp.initial_dist().dot(best.values.v);
  return std::max(gap, 0.0);
}

double nu_disadvantage(const ValueTable& values, const ExplorationDistribution& nu) {
  const VectorXd per_state = values.v - values.q.rowwise().minCoeff();
  return nu.state_marginal().dot(per_state);
}

double nu_disadvantage(const TabularMdp& mdp, const TransitionModel& model,
                       const Policy& policy, const ExplorationDistribution& nu) {
  return nu_disadvantage(evaluate_policy(mdp, model, policy), nu);
}

BoundReport corollary_tv_bound(const TabularMdp& mdp,
                               const TransitionModel& model_hat,
                               const Policy& policy_hat,
                               const Policy& policy_star, double eps_oc) {
  const TransitionModel& truth = mdp.dynamics();
  const double gamma = mdp.discount();
  const double lhs = (1.0 - gamma) * (performance(mdp, truth, policy_hat) -
                                      performance(mdp, truth, policy_star));
  const double v_hat_max =
      evaluate_policy(mdp, model_hat, policy_hat).v.cwiseAbs().maxCoeff();
  const double v_max =
      evaluate_policy(mdp, model_hat, policy_star).v.cwiseAbs().maxCoeff();
  const MatrixXd l1 = model_hat.l1_distance(truth);
  const double tv_learned =
      occupancy(mdp, truth, policy_hat).state_action.cwiseProduct(l1).sum();
  const double tv_expert =
      occupancy(mdp, truth, policy_star).state_action.cwiseProduct(l1).sum();
  const double rhs = eps_oc + gamma * v_hat_max * tv_learned + gamma * v_max * tv_expert;
  return {lhs,
          rhs,
          {{"eps_oc", eps_oc},
           {"v_hat_max", v_hat_max},
           {"v_max", v_max},
           {"tv_learned", tv_learned},
           {"tv_expert", tv_expert}},
          lhs <= rhs + kBoundSlack};
}

BoundReport corollary_pdam_bound(const TabularMdp& mdp,
                                 const TransitionModel& model_hat,
                                 const Policy& policy_hat,
                                 const Policy& policy_star,
                                 const ExplorationDistribution& nu,
                                 double eps_po) {
  const TransitionModel& truth = mdp.dynamics();
  const double gamma = mdp.discount();
  const double lhs = (1.0 - gamma) * (performance(mdp, truth, policy_hat) -
                                      performance(mdp, truth, policy_star));
  const double v_hat_max =
      evaluate_policy(mdp, model_hat, policy_hat).v.cwiseAbs().maxCoeff();
  const double v_max =
      evaluate_policy(mdp, model_hat, policy_star).v.cwiseAbs().maxCoeff();
  const MatrixXd l1 = model_hat.l1_distance(truth);
  const OccupancyMeasure occ_star = occupancy(mdp, truth, policy_star);
  const double tv_learned =
      occupancy(mdp, truth, policy_hat).state_action.cwiseProduct(l1).sum();
  const double tv_expert = occ_star.state_action.cwiseProduct(l1).sum();
  const double coverage = coverage_coefficient(nu, occ_star);
  const double policy_term = std::isinf(coverage)
                                 ? std::numeric_limits<double>::infinity()
                                 : coverage * eps_po;
  const double rhs = policy_term + gamma * v_hat_max * (tv_learned + tv_expert);
  return {lhs,
          rhs,
          {{"eps_po", eps_po},
           {"coverage", coverage},
           {"policy_term", policy_term},
           {"v_hat_max", v_hat_max},
           {"v_max", v_max},
           {"tv_learned", tv_learned},
           {"tv_expert", tv_expert}},
          lhs <= rhs + kBoundSlack};
}

}  // namespace lamps
