#include <doctest.h>

#include <cmath>

#include "lamps/widetree.hpp"

using namespace lamps;
using namespace widetree_states;

TEST_CASE("tree layout and stochastic kernels") {
  const WideTree tree = build_widetree({4, 0.01, 0.99});
  CHECK(tree.mdp.num_states() == 9);
  CHECK(tree.mdp.num_actions() == 2);
  for (const TransitionModel* m : {&tree.mdp.dynamics(), &tree.good, &tree.bad}) {
    for (Eigen::Index r = 0; r < m->kernel().rows(); ++r) {
      CHECK(std::abs(m->kernel().row(r).sum() - 1.0) <= 1e-12);
      CHECK(m->kernel().row(r).minCoeff() >= 0.0);
    }
  }
  const TransitionModel& truth = tree.mdp.dynamics();
  CHECK(truth.prob(kRoot, kWideTreeTrapAction, kTrap) == 1.0);
  CHECK(truth.prob(kRoot, 1 - kWideTreeTrapAction, kSafe) == 1.0);
  for (int a = 0; a < 2; ++a) {
    CHECK(truth.prob(kTrap, a, kTrapChild) == 1.0);
    CHECK(truth.prob(kSafe, a, kSafeChild) == 1.0);
    for (int leaf = kFirstLeaf; leaf < 9; ++leaf) CHECK(truth.prob(leaf, a, leaf) == 1.0);
  }
  CHECK(tree.mdp.cost()(kTrap, 0) == 1.0);
  CHECK(tree.mdp.cost()(kRoot, 1) == 0.01);
}

TEST_CASE("model errors sit where the class design puts them") {
  const WideTree tree = build_widetree({16, 0.01, 0.99});
  const MatrixXd good_err = tree.good.l1_distance(tree.mdp.dynamics());
  const MatrixXd bad_err = tree.bad.l1_distance(tree.mdp.dynamics());
  for (int s = 0; s < tree.mdp.num_states(); ++s) {
    for (int a = 0; a < 2; ++a) {
      const bool corrupted_child = s == kTrapChild || s == kSafeChild;
      CHECK(good_err(s, a) == (corrupted_child ? 2.0 : 0.0));
      CHECK(bad_err(s, a) == (s == kRoot ? 2.0 : 0.0));
    }
  }
  // Corrupted rows land on a disjoint quarter of the leaves.
  const int quarter = 4;
  for (int k = 0; k < quarter; ++k) {
    CHECK(tree.mdp.dynamics().prob(kTrapChild, 0, kFirstLeaf + k) == 0.25);
    CHECK(tree.mdp.dynamics().prob(kSafeChild, 0, kFirstLeaf + quarter + k) == 0.25);
    CHECK(tree.good.prob(kTrapChild, 0, kFirstLeaf + 2 * quarter + k) == 0.25);
    CHECK(tree.good.prob(kSafeChild, 0, kFirstLeaf + 3 * quarter + k) == 0.25);
  }
}

TEST_CASE("the root action is critical") {
  const WideTree tree = build_widetree();
  const Policy in_truth = optimal_policy(tree.mdp, tree.mdp.dynamics());
  CHECK(in_truth.mode(kRoot) == 1 - kWideTreeTrapAction);
  const Policy in_bad = optimal_policy(tree.mdp, tree.bad);
  CHECK(in_bad.mode(kRoot) == kWideTreeTrapAction);
  const Policy in_good = optimal_policy(tree.mdp, tree.good);
  CHECK(in_good.mode(kRoot) == 1 - kWideTreeTrapAction);
  CHECK(performance(tree.mdp, tree.mdp.dynamics(), in_bad) >
        performance(tree.mdp, tree.mdp.dynamics(), in_good) + 0.9);
}

TEST_CASE("expert performance matches the episodic hand sum") {
  for (double gamma : {0.5, 0.9, 0.99}) {
    const double eps = 0.01;
    const WideTree tree = build_widetree({8, eps, gamma});
    const Policy expert = optimal_policy(tree.mdp, tree.mdp.dynamics());
    // Three epsilon steps to a leaf, then the absorbing leaf tail.
    const double hand = eps * (1.0 + gamma + gamma * gamma) +
                        std::pow(gamma, 3) * eps / (1.0 - gamma);
    CHECK(std::abs(performance(tree.mdp, tree.mdp.dynamics(), expert) - hand) <= 1e-8);
  }
}

TEST_CASE("invalid specs are rejected") {
  CHECK_THROWS_AS(build_widetree({6, 0.01, 0.99}), std::invalid_argument);
  CHECK_THROWS_AS(build_widetree({0, 0.01, 0.99}), std::invalid_argument);
  CHECK_THROWS_AS(build_widetree({4, 0.0, 0.99}), std::invalid_argument);
  CHECK_THROWS_AS(build_widetree({4, 1.0, 0.99}), std::invalid_argument);
  CHECK_THROWS_AS(run_widetree_experiment({}, {0, 0.9, 10, 0}), std::invalid_argument);
}

TEST_CASE("single-round losses on a six-tuple dataset") {
  const double eps = 0.01;
  const double gamma = 0.99;
  const WideTree tree = build_widetree({4, eps, gamma});
  // Leaves 5..8; the true children reach leaves 5 and 6, the good model's 7 and 8.
  const std::vector<Transition> data{{kRoot, 1, kSafe, Source::learned},
                                     {kTrapChild, 0, 5, Source::exploration},
                                     {kSafeChild, 1, 6, Source::exploration},
                                     {kSafe, 0, kSafeChild, Source::learned},
                                     {5, 0, 5, Source::learned},
                                     {kTrap, 1, kTrapChild, Source::exploration}};
  const double floor_nll = -std::log(kLogProbFloor);
  CHECK(mle_loss(tree.good, data) == doctest::Approx(2.0 * floor_nll / 6.0).epsilon(1e-14));
  CHECK(mle_loss(tree.bad, data) == doctest::Approx(floor_nll / 6.0).epsilon(1e-14));

  const Policy pi = optimal_policy(tree.mdp, tree.good);
  const VectorXd v = evaluate_policy(tree.mdp, tree.good, pi).v;
  // Only the root tuple carries a moment error under the bad model: V(trap) - V(safe) = 1 - eps.
  CHECK(std::abs(moment_match_loss(tree.good, data, v, FitVariant::moment_match_abs)) <= 1e-12);
  CHECK(moment_match_loss(tree.bad, data, v, FitVariant::moment_match_abs) ==
        doctest::Approx((1.0 - eps) / 6.0).epsilon(1e-10));
  CHECK(moment_match_loss(tree.bad, data, v, FitVariant::moment_match_signed) ==
        doctest::Approx(-(1.0 - eps) / 3.0).epsilon(1e-10));
}

TEST_CASE("likelihood prefers the bad model when child transitions dominate") {
  const WideTree tree = build_widetree();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Policy pi = seed % 2 == 0 ? Policy::uniform(tree.mdp.num_states(), 2)
                                    : optimal_policy(tree.mdp, tree.mdp.dynamics());
    const TransitionDataset d = sample_transitions(tree.mdp, pi, tree.nu, 60, seed);
    int children = 0;
    int roots = 0;
    for (const auto& t : d.all()) {
      children += (t.state == kTrapChild || t.state == kSafeChild) ? 1 : 0;
      roots += t.state == kRoot ? 1 : 0;
    }
    if (children <= roots) continue;
    ++checked;
    CHECK(mle_loss(tree.bad, d.all()) < mle_loss(tree.good, d.all()));
  }
  CHECK(checked >= 20);
}

TEST_CASE("moment loss prefers the good model whenever the root is in the data") {
  const WideTree tree = build_widetree();
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const TransitionDataset d =
        sample_transitions(tree.mdp, Policy::uniform(tree.mdp.num_states(), 2), tree.nu, 30, seed);
    bool has_root = false;
    for (const auto& t : d.all()) has_root = has_root || t.state == kRoot;
    if (!has_root) continue;
    ++checked;
    for (const TransitionModel* planner : {&tree.good, &tree.bad}) {
      const VectorXd v = evaluate_policy(tree.mdp, *planner, optimal_policy(tree.mdp, *planner)).v;
      CHECK(moment_match_loss(tree.good, d.all(), v, FitVariant::moment_match_abs) <
            moment_match_loss(tree.bad, d.all(), v, FitVariant::moment_match_abs));
    }
  }
  CHECK(checked >= 20);
}

TEST_CASE("experiment traces start uniform and are seed-deterministic") {
  const WideTreeConfig cfg{12, 0.9, 50, 5};
  const WideTreeTrace a = run_widetree_experiment({}, cfg);
  const WideTreeTrace b = run_widetree_experiment({}, cfg);
  REQUIRE(a.p_good_mle.size() == 13);
  REQUIRE(a.p_good_mm.size() == 13);
  CHECK(a.p_good_mle[0] == 0.5);
  CHECK(a.p_good_mm[0] == 0.5);
  CHECK(a.p_good_mle == b.p_good_mle);
  CHECK(a.p_good_mm == b.p_good_mm);
  for (double p : a.p_good_mm) CHECK((p > 0.0 && p < 1.0));

  const Table t = a.table();
  CHECK(t.columns == std::vector<std::string>{"iteration", "p_good_mle", "p_good_mm"});
  REQUIRE(t.rows.size() == 13);
  CHECK(t.rows[3][0] == 3.0);
  CHECK(t.rows[3][2] == a.p_good_mm[3]);

  const WideTreeTrace other = run_widetree_experiment({}, {12, 0.9, 50, 6});
  CHECK_FALSE((other.p_good_mle == a.p_good_mle && other.p_good_mm == a.p_good_mm));
}
