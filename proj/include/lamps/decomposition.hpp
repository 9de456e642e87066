#pragma once

// Exact evaluation of performance-difference decompositions and their
// model-error upper bounds on tabular instances.
//
// Decomposition reports use the scaled convention: the left-hand side of the
// two performance-difference identities is (1 - gamma) [J*(pi_hat) - J*(pi*)],
// and every term is scaled to match. `unscaled()` converts to the convention
// where the left-hand side is the raw difference and successor terms carry
// gamma / (1 - gamma).

#include <string>
#include <string_view>
#include <vector>

#include "lamps/tabular.hpp"

namespace lamps {

struct NamedValue {
  std::string name;
  double value;
};

struct DecompositionReport {
  double lhs = 0.0;
  std::vector<NamedValue> terms;
  double residual = 0.0;  // |lhs - sum(terms)|

  double term(std::string_view name) const;
  double sum_terms() const;
};

struct BoundReport {
  double lhs = 0.0;
  double rhs = 0.0;
  std::vector<NamedValue> components;
  bool satisfied = false;  // lhs <= rhs + kBoundSlack

  double component(std::string_view name) const;
};

inline constexpr double kBoundSlack = 1e-8;

// Fixed term names; they double as CSV/JSON column keys.
namespace terms {
inline constexpr std::string_view kSuccessorValueGap = "successor_value_gap";
inline constexpr std::string_view kInModelDiff = "in_model_diff";
inline constexpr std::string_view kValueDiffLearned = "value_diff_learned";
inline constexpr std::string_view kValueDiffExpert = "value_diff_expert";
inline constexpr std::string_view kExpertDisadvantage = "expert_disadvantage";
}  // namespace terms

/// J_{M*}(pi) - J_{M_hat}(pi) against its single successor-value term
/// gamma / (1 - gamma) E_{D_{omega,pi}}[E_{M*} V_hat - E_{M_hat} V_hat].
DecompositionReport simulation_lemma(const TabularMdp& mdp,
                                     const TransitionModel& model_hat,
                                     const Policy& policy);

/// Planning-in-model decomposition. Terms: in_model_diff,
/// value_diff_learned (uses V^{pi_hat}_{M_hat}), value_diff_expert (uses
/// V^{pi*}_{M_hat}).
DecompositionReport pdpm_decomposition(const TabularMdp& mdp,
                                       const TransitionModel& model_hat,
                                       const Policy& policy_hat,
                                       const Policy& policy_star);

/// Advantage-in-model decomposition. Terms: expert_disadvantage,
/// value_diff_learned, value_diff_expert; all three only need
/// V^{pi_hat}_{M_hat}.
DecompositionReport pdam_decomposition(const TabularMdp& mdp,
                                       const TransitionModel& model_hat,
                                       const Policy& policy_hat,
                                       const Policy& policy_star);

/// Rescales a pdpm/pdam report by 1 / (1 - gamma).
DecompositionReport unscaled(const DecompositionReport& report, double discount);

/// sup_{s,a} occ_star(s,a) / nu(s,a) over the support of occ_star; +inf when
/// nu misses part of that support.
double coverage_coefficient(const ExplorationDistribution& nu,
                            const OccupancyMeasure& occ_star);

/// E_omega[V^pi_M] - min_pi' E_omega[V^pi'_M], the planning error of `policy`.
double optimality_gap(const TabularMdp& mdp, const TransitionModel& model,
                      const Policy& policy);

/// E_{s~nu}[V^pi_M(s) - min_a Q^pi_M(s,a)] with s drawn from nu's state
/// marginal.
double nu_disadvantage(const TabularMdp& mdp, const TransitionModel& model,
                       const Policy& policy, const ExplorationDistribution& nu);
double nu_disadvantage(const ValueTable& values, const ExplorationDistribution& nu);

/// Total-variation bound for planning-based policies:
/// lhs = (1 - gamma)[J*(pi_hat) - J*(pi*)],
/// rhs = eps_oc + gamma V_hat_max E_{D pi_hat}||M_hat - M*||_1
///              + gamma V_max E_{D pi*}||M_hat - M*||_1.
BoundReport corollary_tv_bound(const TabularMdp& mdp,
                               const TransitionModel& model_hat,
                               const Policy& policy_hat,
                               const Policy& policy_star, double eps_oc);

/// Total-variation bound for disadvantage-minimizing policies:
/// rhs = C eps_po + gamma V_hat_max (E_{D pi_hat} + E_{D pi*})||M_hat - M*||_1
/// where eps_po is the nu-disadvantage of pi_hat in M_hat and C the coverage of
/// D_{omega,pi*} by nu. With nu = D_{omega,pi*} the coverage term is eps_po.
BoundReport corollary_pdam_bound(const TabularMdp& mdp,
                                 const TransitionModel& model_hat,
                                 const Policy& policy_hat,
                                 const Policy& policy_star,
                                 const ExplorationDistribution& nu,
                                 double eps_po);

}  // namespace lamps
