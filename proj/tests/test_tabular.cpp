#include <doctest.h>

#include <cmath>
#include <map>

#include "lamps/json_io.hpp"
#include "lamps/tabular.hpp"
#include "lamps/widetree.hpp"
#include "oracles.hpp"

using namespace lamps;

namespace {

TabularMdp single_state(double cost, double gamma) {
  return {MatrixXd::Constant(1, 1, cost), gamma, VectorXd::Ones(1),
          TransitionModel::uniform(1, 1)};
}

void check_bellman(const TabularMdp& mdp, const TransitionModel& model, const Policy& pi,
                   const ValueTable& vt) {
  const MatrixXd expected_q =
      mdp.cost() + mdp.discount() * model.expected_next(vt.v);
  CHECK((vt.q - expected_q).cwiseAbs().maxCoeff() <= 1e-10);
  const VectorXd expected_v = (pi.action_dist().cwiseProduct(vt.q)).rowwise().sum();
  CHECK((vt.v - expected_v).cwiseAbs().maxCoeff() <= 1e-10);
}

}  // namespace

TEST_CASE("single state, single action: value is the geometric series") {
  const TabularMdp mdp = single_state(1.0, 0.9);
  const ValueTable vt = evaluate_policy(mdp, mdp.dynamics(), Policy::uniform(1, 1));
  CHECK(vt.v(0) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(performance(mdp, mdp.dynamics(), Policy::uniform(1, 1)) ==
        doctest::Approx(10.0).epsilon(1e-14));
}

TEST_CASE("zero costs give zero values and zero performance") {
  Rng rng(3);
  TabularMdp base = random_mdp(5, 3, 0.9, rng);
  const TabularMdp mdp(MatrixXd::Zero(5, 3), 0.9, base.initial_dist(), base.dynamics());
  const Policy pi = random_policy(5, 3, rng);
  const ValueTable vt = evaluate_policy(mdp, mdp.dynamics(), pi);
  CHECK(vt.v.cwiseAbs().maxCoeff() == 0.0);
  CHECK(vt.q.cwiseAbs().maxCoeff() == 0.0);
  CHECK(performance(mdp, mdp.dynamics(), pi) == 0.0);
}

TEST_CASE("value tables satisfy the Bellman equations and match fixed-point iteration") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int S = 2 + trial % 7;
    const int A = 1 + trial % 4;
    const double gamma = trial % 2 ? 0.95 : 0.5;
    const TabularMdp mdp = random_mdp(S, A, gamma, rng);
    const TransitionModel model = random_model(S, A, rng);
    const Policy pi = random_policy(S, A, rng);
    const ValueTable vt = evaluate_policy(mdp, model, pi);
    check_bellman(mdp, model, pi, vt);
    const VectorXd ref =
        oracle::iterate_values(mdp.cost(), model.kernel(), pi.action_dist(), gamma);
    CHECK((vt.v - ref).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("policy value matches a Monte-Carlo estimate within three standard errors") {
  Rng rng(2024);
  const TabularMdp mdp = random_mdp(6, 3, 0.9, rng);
  const Policy pi = random_policy(6, 3, rng);
  const ValueTable vt = evaluate_policy(mdp, mdp.dynamics(), pi);
  // Truncation bias is below 0.9^150 / 0.1 < 2e-6, far under the standard error.
  const auto mc = oracle::monte_carlo_value(mdp.cost(), mdp.dynamics().kernel(),
                                            pi.action_dist(), 0.9, 0, 1'000'000, 150, 99);
  CHECK(std::abs(vt.v(0) - mc.mean) <= 3.0 * mc.stderr_);
}

TEST_CASE("occupancy of a single state-action pair is a point mass") {
  for (double gamma : {0.0, 0.3, 0.99}) {
    const TabularMdp mdp = single_state(0.5, gamma);
    const OccupancyMeasure occ = occupancy(mdp, mdp.dynamics(), Policy::uniform(1, 1));
    CHECK(occ.state_action(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("two-step absorbing chain splits occupancy evenly at gamma one half") {
  const std::vector<int> next{1, 1};
  const TransitionModel chain = TransitionModel::deterministic(2, 1, next);
  VectorXd omega(2);
  omega << 1.0, 0.0;
  const TabularMdp mdp(MatrixXd::Zero(2, 1), 0.5, omega, chain);
  const OccupancyMeasure occ = occupancy(mdp, chain, Policy::uniform(2, 1));
  CHECK(occ.state_only(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(occ.state_only(1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("occupancy matches the truncated discounted sum and its marginals") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int S = 2 + trial % 9;
    const int A = 1 + trial % 3;
    const double gamma = (trial % 3 == 0) ? 0.9 : 0.5;
    const TabularMdp mdp = random_mdp(S, A, gamma, rng);
    const TransitionModel model = random_model(S, A, rng);
    const Policy pi = random_policy(S, A, rng);
    const OccupancyMeasure occ = occupancy(mdp, model, pi);
    const MatrixXd ref = oracle::truncated_occupancy(model.kernel(), pi.action_dist(),
                                                     mdp.initial_dist(), gamma, 500);
    CHECK((occ.state_action - ref).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(occ.state_action.sum() - 1.0) <= 1e-10);
    CHECK((occ.state_only - occ.state_action.rowwise().sum()).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("performance equals expected occupancy cost over one minus gamma") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int S = 2 + trial % 8;
    const int A = 1 + trial % 4;
    const double gamma = 0.5 + 0.45 * (trial % 2);
    const TabularMdp mdp = random_mdp(S, A, gamma, rng);
    const Policy pi = random_policy(S, A, rng);
    const OccupancyMeasure occ = occupancy(mdp, mdp.dynamics(), pi);
    const double via_occ = occ.state_action.cwiseProduct(mdp.cost()).sum() / (1.0 - gamma);
    CHECK(std::abs(performance(mdp, mdp.dynamics(), pi) - via_occ) <= 1e-8);
  }
}

TEST_CASE("optimal policy picks the dominant action") {
  MatrixXd cost(2, 2);
  cost << 0.0, 1.0, 0.0, 1.0;
  const std::vector<int> next{1, 1, 0, 0};
  const TransitionModel m = TransitionModel::deterministic(2, 2, next);
  const TabularMdp mdp(cost, 0.9, VectorXd::Constant(2, 0.5), m);
  const Policy pi = optimal_policy(mdp, m);
  CHECK(pi.is_deterministic());
  CHECK(pi.mode(0) == 0);
  CHECK(pi.mode(1) == 0);
}

TEST_CASE("ties in the greedy argmin go to the lowest action index") {
  MatrixXd q(2, 3);
  q << 1.0, 1.0, 2.0, 3.0, 0.5, 0.5;
  const Policy pi = greedy_policy(q);
  CHECK(pi.mode(0) == 0);
  CHECK(pi.mode(1) == 1);
}

TEST_CASE("optimal policy on the tree avoids the trap at the root") {
  const WideTree tree = build_widetree();
  const Policy pi = optimal_policy(tree.mdp, tree.mdp.dynamics());
  CHECK(pi.mode(widetree_states::kRoot) != kWideTreeTrapAction);
}

TEST_CASE("optimal policy matches brute-force enumeration of deterministic policies") {
  Rng rng(8);
  for (int trial = 0; trial < 40; ++trial) {
    const int S = 1 + trial % 4;
    const int A = 1 + trial % 2;
    const double gamma = trial % 2 ? 0.9 : 0.6;
    const TabularMdp mdp = random_mdp(S, A, gamma, rng);
    const double tol = 1e-10;
    const PlanResult plan = plan_optimal(mdp, mdp.dynamics(), tol);
    CHECK(plan.policy.is_deterministic());
    CHECK(bellman_optimality_residual(plan.values) <= tol);
    const double best = oracle::best_deterministic_performance(
        mdp.cost(), mdp.dynamics().kernel(), mdp.initial_dist(), gamma);
    const double mine = performance(mdp, mdp.dynamics(), plan.policy);
    CHECK(mine <= best + tol);
    CHECK(mine >= best - tol);
  }
}

TEST_CASE("sampling from a one-state deterministic MDP yields only the trivial tuple") {
  const TabularMdp mdp = single_state(0.2, 0.8);
  const TransitionDataset d = sample_transitions(mdp, Policy::uniform(1, 1),
                                                 ExplorationDistribution::uniform(1, 1), 200, 1);
  CHECK(d.size() == 200);
  for (const auto& t : d.all()) {
    CHECK(t.state == 0);
    CHECK(t.action == 0);
    CHECK(t.next_state == 0);
  }
}

TEST_CASE("sampling is reproducible and rejects an empty request") {
  Rng rng(9);
  const TabularMdp mdp = random_mdp(5, 2, 0.9, rng);
  const Policy pi = random_policy(5, 2, rng);
  const auto nu = random_exploration(5, 2, rng);
  CHECK(sample_transitions(mdp, pi, nu, 500, 77) == sample_transitions(mdp, pi, nu, 500, 77));
  CHECK_FALSE(sample_transitions(mdp, pi, nu, 500, 77) == sample_transitions(mdp, pi, nu, 500, 78));
  CHECK_THROWS_AS(sample_transitions(mdp, pi, nu, 0, 1), std::invalid_argument);
}

TEST_CASE("sampled state-action frequencies match the half occupancy, half nu mixture") {
  Rng rng(10);
  const int S = 4;
  const int A = 2;
  const TabularMdp mdp = random_mdp(S, A, 0.8, rng);
  const Policy pi = random_policy(S, A, rng);
  const auto nu = random_exploration(S, A, rng);
  const std::size_t n = 100'000;
  const TransitionDataset d = sample_transitions(mdp, pi, nu, n, 4242);
  MatrixXd freq = MatrixXd::Zero(S, A);
  for (const auto& t : d.all()) freq(t.state, t.action) += 1.0;
  freq /= static_cast<double>(n);
  const MatrixXd mix = 0.5 * occupancy(mdp, mdp.dynamics(), pi).state_action + 0.5 * nu.weights();
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double p = mix(s, a);
      const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
      CHECK(std::abs(freq(s, a) - p) <= 3.0 * se + 1e-12);
    }
  }
}

TEST_CASE("constructors reject malformed inputs") {
  MatrixXd bad_kernel(2, 2);
  bad_kernel << 0.5, 0.6, 1.0, 0.0;
  CHECK_THROWS_AS(TransitionModel(2, 1, bad_kernel), std::invalid_argument);
  MatrixXd negative(1, 2);
  negative << 1.5, -0.5;
  CHECK_THROWS_AS(Policy{negative}, std::invalid_argument);
  CHECK_THROWS_AS(TabularMdp(MatrixXd::Constant(1, 1, 1.5), 0.9, VectorXd::Ones(1),
                             TransitionModel::uniform(1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(TabularMdp(MatrixXd::Zero(1, 1), 1.0, VectorXd::Ones(1),
                             TransitionModel::uniform(1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(TabularMdp(MatrixXd::Zero(1, 1), 0.5, VectorXd::Constant(1, 0.9),
                             TransitionModel::uniform(1, 1)),
                  std::invalid_argument);
  Rng rng(1);
  const TabularMdp mdp = random_mdp(3, 2, 0.9, rng);
  CHECK_THROWS_AS(evaluate_policy(mdp, TransitionModel::uniform(2, 2), Policy::uniform(3, 2)),
                  std::invalid_argument);
}

TEST_CASE("rows within tolerance of one are accepted and stay stochastic") {
  MatrixXd k(2, 2);
  k << 0.5 + 4e-13, 0.5, 0.25, 0.75;
  const TransitionModel m(2, 1, k);
  CHECK(std::abs(m.kernel().row(0).sum() - 1.0) <= 1e-15);
  const TransitionModel again(2, 1, m.kernel());
  CHECK(again.kernel() == m.kernel());
}

TEST_CASE("MDP JSON round trip is bit-faithful") {
  Rng rng(123);
  for (int trial = 0; trial < 20; ++trial) {
    const TabularMdp mdp = random_mdp(1 + trial % 6, 1 + trial % 3, 0.37 + 0.03 * trial, rng);
    const Json doc = mdp_to_json(mdp);
    const TabularMdp back = mdp_from_json(Json::parse(doc.dump()));
    CHECK(back.cost() == mdp.cost());
    CHECK(back.discount() == mdp.discount());
    CHECK(back.initial_dist() == mdp.initial_dist());
    CHECK(back.dynamics() == mdp.dynamics());
    CHECK(mdp_to_json(back).dump() == doc.dump());
  }
}

TEST_CASE("MDP JSON errors name the offending field") {
  Rng rng(4);
  Json doc = mdp_to_json(random_mdp(2, 2, 0.9, rng));
  Json missing = doc;
  missing.erase("gamma");
  CHECK_THROWS_WITH_AS(mdp_from_json(missing), doctest::Contains("gamma"), std::invalid_argument);
  Json ragged = doc;
  ragged["kernel"][1][0] = Json::array({1.0});
  CHECK_THROWS_WITH_AS(mdp_from_json(ragged), doctest::Contains("kernel[1][0]"),
                       std::invalid_argument);
  Json text = doc;
  text["cost"][0][1] = "x";
  CHECK_THROWS_WITH_AS(mdp_from_json(text), doctest::Contains("cost[0][1]"),
                       std::invalid_argument);
}
