#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "lamps/lds.hpp"
#include "lamps/rng.hpp"
#include "oracles.hpp"

using namespace lamps;

namespace {

MatrixXd random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Rescaled so the spectral radius is below `radius`.
MatrixXd random_stable(int n, Rng& rng, double radius = 0.9) {
  MatrixXd a = random_matrix(n, n, rng);
  const double rho = a.eigenvalues().cwiseAbs().maxCoeff();
  return a * (radius / std::max(rho, 1e-12));
}

std::vector<LdsTuple> random_tuples(int count, int n, int m, int max_step, Rng& rng) {
  std::vector<LdsTuple> data;
  for (int i = 0; i < count; ++i) {
    data.push_back({static_cast<int>(uniform01(rng) * max_step), random_matrix(n, 1, rng),
                    random_matrix(m, 1, rng), random_matrix(n, 1, rng)});
  }
  return data;
}

double relative_error(const VectorXd& analytic, const VectorXd& numeric) {
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

}  // namespace

TEST_CASE("one-step scalar recursion") {
  const LdsModel model{MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)};
  const RiccatiSolution sol = riccati_solve(model, 1, MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1));
  REQUIRE(sol.p.size() == 2);
  REQUIRE(sol.k.size() == 1);
  CHECK(sol.p[1](0, 0) == 1.0);
  CHECK(sol.k[0](0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sol.p[0](0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("zero terminal cost gives zero values and gains") {
  Rng rng(1);
  const LdsModel model{random_matrix(3, 3, rng), random_matrix(3, 2, rng)};
  const RiccatiSolution sol =
      riccati_solve(model, 7, MatrixXd::Zero(3, 3), MatrixXd::Identity(2, 2));
  for (const auto& p : sol.p) CHECK(p.norm() == 0.0);
  for (const auto& k : sol.k) CHECK(k.norm() == 0.0);
}

TEST_CASE("non-positive-definite control cost is rejected") {
  const LdsModel model{MatrixXd::Identity(2, 2), MatrixXd::Ones(2, 1)};
  CHECK_THROWS_AS(riccati_solve(model, 3, MatrixXd::Identity(2, 2), MatrixXd::Zero(1, 1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(riccati_solve(model, 3, MatrixXd::Identity(2, 2), -MatrixXd::Identity(1, 1)),
                  std::invalid_argument);
}

TEST_CASE("value matrices are symmetric and positive semidefinite") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 4;
    const int m = 1 + trial % 2;
    const LdsModel model{random_matrix(n, n, rng), random_matrix(n, m, rng)};
    const MatrixXd root = random_matrix(n, n, rng);
    const MatrixXd q_terminal = root * root.transpose();
    const RiccatiSolution sol = riccati_solve(model, 12, q_terminal, MatrixXd::Identity(m, m));
    CHECK(sol.p.back() == q_terminal);
    for (const auto& p : sol.p) {
      const double scale = std::max(1.0, p.norm());
      CHECK((p - p.transpose()).norm() <= 1e-10 * scale);
      const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (p + p.transpose()));
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * scale);
    }
  }
}

TEST_CASE("value at the start equals the simulated closed-loop cost and the batch optimum") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixXd a = random_stable(2, rng);
    const MatrixXd b = random_matrix(2, 1, rng);
    const LdsTruth truth = LdsTruth::time_invariant(a, b, 5);
    const RiccatiSolution sol =
        riccati_solve(LdsModel{a, b}, 5, truth.terminal_q, truth.control_r);
    const LdsRollout roll = simulate_closed_loop(truth, sol);
    const double predicted = truth.initial_state.dot(sol.p[0] * truth.initial_state);
    CHECK(std::abs(roll.cost - predicted) <= 1e-8);

    // Independent recomputation of the rollout cost.
    double cost = roll.states.back().squaredNorm();
    for (const auto& u : roll.controls) cost += u.squaredNorm();
    CHECK(std::abs(cost - roll.cost) <= 1e-12 * std::max(1.0, cost));

    const auto batch = oracle::batch_lq([&](int) { return a; }, b, MatrixXd::Zero(2, 2),
                                        truth.control_r, truth.terminal_q, 5,
                                        truth.initial_state);
    CHECK(std::abs(batch.cost - predicted) <= 1e-8);
  }
}

TEST_CASE("expert controller is optimal for the alternating system") {
  for (int horizon : {1, 2, 10, 100}) {
    const LdsTruth truth = LdsTruth::alternating(2, horizon);
    const RiccatiSolution expert = expert_controller(truth);
    const LdsRollout roll = simulate_closed_loop(truth, expert);
    const auto batch = oracle::batch_lq([&](int t) { return truth.a_at(t); }, truth.b,
                                        MatrixXd::Zero(2, 2), truth.control_r, truth.terminal_q,
                                        horizon, truth.initial_state);
    CHECK(std::abs(roll.cost - batch.cost) <= 1e-8);
    for (int t = 0; t < horizon; ++t) {
      CHECK((roll.controls[static_cast<std::size_t>(t)] - batch.controls[static_cast<std::size_t>(t)])
                .norm() <= 1e-6);
    }
  }
}

TEST_CASE("no learned controller beats the expert") {
  Rng rng(4);
  const LdsTruth truth = LdsTruth::alternating(2, 20);
  const double expert = simulate_closed_loop(truth, expert_controller(truth)).cost;
  for (int trial = 0; trial < 50; ++trial) {
    const LdsModel model{random_matrix(2, 2, rng), random_matrix(2, 1, rng)};
    const RiccatiSolution sol = riccati_solve(model, 20, truth.terminal_q, truth.control_r);
    CHECK(simulate_closed_loop(truth, sol).cost >= expert - 1e-8);
  }
}

TEST_CASE("prediction loss") {
  const LdsModel scalar{MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1)};
  const std::vector<LdsTuple> one{{0, VectorXd::Ones(1), VectorXd::Zero(1), VectorXd::Constant(1, 2.0)}};
  CHECK(lds_mle_loss(scalar, one) == 1.0);

  Rng rng(5);
  const LdsModel model{random_matrix(2, 2, rng), random_matrix(2, 1, rng)};
  std::vector<LdsTuple> data = random_tuples(40, 2, 1, 10, rng);
  std::vector<LdsTuple> exact = data;
  for (auto& t : exact) t.x_next = model.a * t.x + model.b * t.u;
  CHECK(lds_mle_loss(model, exact) <= 1e-28);

  double manual = 0.0;
  for (const auto& t : data) {
    double sq = 0.0;
    for (int i = 0; i < 2; ++i) {
      const double pred = model.a(i, 0) * t.x(0) + model.a(i, 1) * t.x(1) + model.b(i, 0) * t.u(0);
      sq += (t.x_next(i) - pred) * (t.x_next(i) - pred);
    }
    manual += sq;
  }
  CHECK(lds_mle_loss(model, data) == doctest::Approx(manual / 40.0).epsilon(1e-13));

  const std::vector<LdsTuple> none;
  CHECK_THROWS_AS(lds_mle_loss(model, none), std::invalid_argument);
}

TEST_CASE("value-moment loss") {
  SUBCASE("three-tuple scalar dataset") {
    // P_1 = 2, P_2 = 3; model a = 0.5, b = 1.
    RiccatiSolution values;
    values.p = {MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, 2.0),
                MatrixXd::Constant(1, 1, 3.0)};
    values.k = {MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 1)};
    const LdsModel model{MatrixXd::Constant(1, 1, 0.5), MatrixXd::Ones(1, 1)};
    auto vec = [](double v) { return VectorXd::Constant(1, v); };
    const std::vector<LdsTuple> data{{0, vec(2.0), vec(1.0), vec(1.0)},
                                     {1, vec(-1.0), vec(0.0), vec(3.0)},
                                     {0, vec(1.0), vec(-2.0), vec(0.0)}};
    // y = 2, -0.5, -1.5; residuals 2*1 - 2*4, 3*9 - 3*0.25, 0 - 2*2.25.
    const double r1 = 2.0 - 8.0;
    const double r2 = 27.0 - 0.75;
    const double r3 = 0.0 - 4.5;
    CHECK(lds_mm_loss(model, data, values) ==
          doctest::Approx((r1 * r1 + r2 * r2 + r3 * r3) / 3.0).epsilon(1e-14));
  }
  SUBCASE("zero for the generating dynamics") {
    Rng rng(6);
    const LdsModel model{random_stable(2, rng), random_matrix(2, 1, rng)};
    const RiccatiSolution values =
        riccati_solve(model, 10, MatrixXd::Identity(2, 2), MatrixXd::Identity(1, 1));
    std::vector<LdsTuple> data = random_tuples(30, 2, 1, 10, rng);
    for (auto& t : data) t.x_next = model.a * t.x + model.b * t.u;
    CHECK(lds_mm_loss(model, data, values) <= 1e-24);
  }
  SUBCASE("tuples whose next value matrix vanishes contribute nothing") {
    Rng rng(7);
    RiccatiSolution values;
    values.p = {MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2), MatrixXd::Identity(2, 2)};
    values.k = {MatrixXd::Zero(1, 2), MatrixXd::Zero(1, 2)};
    std::vector<LdsTuple> data = random_tuples(10, 2, 1, 1, rng);
    for (auto& t : data) t.step = 0;
    for (int trial = 0; trial < 5; ++trial) {
      const LdsModel model{random_matrix(2, 2, rng, 10.0), random_matrix(2, 1, rng, 10.0)};
      CHECK(lds_mm_loss(model, data, values) == 0.0);
    }
  }
  SUBCASE("steps beyond the value horizon are rejected") {
    const RiccatiSolution values = riccati_solve(LdsModel{MatrixXd::Identity(1, 1), MatrixXd::Ones(1, 1)},
                                                 3, MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1));
    const LdsModel model{MatrixXd::Identity(1, 1), MatrixXd::Ones(1, 1)};
    std::vector<LdsTuple> data{{3, VectorXd::Ones(1), VectorXd::Ones(1), VectorXd::Ones(1)}};
    CHECK_THROWS_AS(lds_mm_loss(model, data, values), std::out_of_range);
    data[0].step = -1;
    CHECK_THROWS_AS(lds_mm_loss(model, data, values), std::out_of_range);
    const std::vector<LdsTuple> none;
    CHECK_THROWS_AS(lds_mm_loss(model, none, values), std::invalid_argument);
  }
}

TEST_CASE("value-moment loss ignores model errors in value null directions") {
  Rng rng(8);
  // Diagonal dynamics keep every value matrix on the first coordinate.
  const MatrixXd a = (VectorXd(2) << 0.9, 0.4).finished().asDiagonal();
  const LdsModel planner{a, MatrixXd::Ones(2, 1)};
  MatrixXd q_terminal = MatrixXd::Zero(2, 2);
  q_terminal(0, 0) = 1.0;
  const RiccatiSolution values = riccati_solve(planner, 15, q_terminal, MatrixXd::Identity(1, 1));
  for (const auto& p : values.p) {
    CHECK(std::abs(p(1, 1)) <= 1e-14);
    CHECK(std::abs(p(0, 1)) <= 1e-14);
  }
  const std::vector<LdsTuple> data = random_tuples(50, 2, 1, 15, rng);
  const LdsModel model{random_matrix(2, 2, rng), random_matrix(2, 1, rng)};
  const double base = lds_mm_loss(model, data, values);
  for (int trial = 0; trial < 10; ++trial) {
    LdsModel shifted = model;
    // Columns of the perturbation lie along the second coordinate.
    shifted.a.row(1) += random_matrix(1, 2, rng, 5.0);
    shifted.b.row(1) += random_matrix(1, 1, rng, 5.0);
    CHECK(std::abs(lds_mm_loss(shifted, data, values) - base) <= 1e-10 * std::max(1.0, base));
  }
  // Perturbing the first row does change the loss.
  LdsModel moved = model;
  moved.a(0, 0) += 0.5;
  CHECK(std::abs(lds_mm_loss(moved, data, values) - base) > 1e-6);
}

TEST_CASE("analytic gradients match central differences") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 3;
    const int m = 1 + trial % 2;
    const LdsModel model{random_matrix(n, n, rng, 0.5), random_matrix(n, m, rng, 0.5)};
    const LdsModel planner{random_stable(n, rng), random_matrix(n, m, rng)};
    const RiccatiSolution values =
        riccati_solve(planner, 8, MatrixXd::Identity(n, n), MatrixXd::Identity(m, m));
    const std::vector<LdsTuple> data = random_tuples(25, n, m, 8, rng);

    LdsModel grad;
    lds_mle_loss(model, data, &grad);
    const VectorXd numeric_mle = oracle::numeric_gradient(
        [&](const VectorXd& p) { return lds_mle_loss(LdsModel::unflatten(p, n, m), data); },
        model.flatten());
    CHECK(relative_error(grad.flatten(), numeric_mle) <= 1e-5);

    lds_mm_loss(model, data, values, &grad);
    const VectorXd numeric_mm = oracle::numeric_gradient(
        [&](const VectorXd& p) { return lds_mm_loss(LdsModel::unflatten(p, n, m), data, values); },
        model.flatten());
    CHECK(relative_error(grad.flatten(), numeric_mm) <= 1e-5);
  }
}

TEST_CASE("flatten round trip") {
  Rng rng(10);
  const LdsModel model{random_matrix(3, 3, rng), random_matrix(3, 2, rng)};
  const VectorXd flat = model.flatten();
  CHECK(flat.size() == 15);
  CHECK(flat(1) == model.a(1, 0));
  const LdsModel back = LdsModel::unflatten(flat, 3, 2);
  CHECK(back.a == model.a);
  CHECK(back.b == model.b);
}

TEST_CASE("iterations to reach a relative target") {
  const std::vector<double> costs{5.0, 1.2, 1.04, 1.01};
  CHECK(iterations_to_reach(costs, 1.0, 0.05) == 3);
  CHECK(iterations_to_reach(costs, 1.0, 0.25) == 2);
  CHECK(iterations_to_reach(costs, 1.0, 0.001) == 5);
  CHECK(iterations_to_reach(costs, 5.0, 0.0) == 1);
  const std::vector<double> none;
  CHECK(iterations_to_reach(none, 1.0, 0.05) == 1);
}

TEST_CASE("realizable system: both fits approach the expert") {
  const MatrixXd a = (MatrixXd(2, 2) << 0.9, 0.1, 0.0, 0.8).finished();
  const LdsTruth truth = LdsTruth::time_invariant(a, MatrixXd::Ones(2, 1), 20);
  LdsExperimentConfig cfg;
  cfg.iterations = 30;
  cfg.step_size = 0.1;
  cfg.rng_seed = 1;
  const LdsTrace trace = run_lds_experiment(truth, cfg);
  REQUIRE(trace.rows.size() == 30);
  CHECK_FALSE(trace.diverged_mle);
  CHECK_FALSE(trace.diverged_mm);
  const LdsIteration& last = trace.rows.back();
  CHECK(last.cost_mle <= 1.05 * last.cost_expert);
  CHECK(last.cost_mm <= 1.05 * last.cost_expert);
  CHECK(last.loss_mle <= 1e-3);
  CHECK(last.loss_mm <= 1e-3 * std::max(1.0, trace.rows.front().loss_mm));
  for (const auto& row : trace.rows) {
    CHECK(row.cost_mle >= row.cost_expert - 1e-8);
    CHECK(row.cost_mm >= row.cost_expert - 1e-8);
  }
}

TEST_CASE("experiment output is deterministic and tabulated") {
  const LdsTruth truth = LdsTruth::alternating(2, 30);
  LdsExperimentConfig cfg;
  cfg.iterations = 4;
  cfg.samples_per_iter = 30;
  cfg.step_budget = 50;
  cfg.rng_seed = 3;
  const LdsTrace a = run_lds_experiment(truth, cfg);
  const LdsTrace b = run_lds_experiment(truth, cfg);
  CHECK(a.table().to_csv() == b.table().to_csv());
  const Table t = a.table();
  CHECK(t.columns ==
        std::vector<std::string>{"iteration", "cost_mle", "cost_mm", "cost_expert", "loss_mle", "loss_mm"});
  REQUIRE(t.rows.size() == 4);
  CHECK(t.rows[0][0] == 1.0);
  CHECK(t.rows[2][1] == a.rows[2].cost_mle);
}
