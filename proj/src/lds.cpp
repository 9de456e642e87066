#include "lamps/lds.hpp"

#include <cmath>
#include <stdexcept>

#include "lamps/online.hpp"
#include "lamps/rng.hpp"

namespace lamps {
namespace {

constexpr std::uint64_t kMleStream = 21;
constexpr std::uint64_t kMmStream = 22;

void check_pd(const MatrixXd& r) {
  if (r.rows() != r.cols() || r.rows() == 0) {
    throw std::invalid_argument("control cost matrix must be square and nonempty");
  }
  Eigen::LLT<MatrixXd> llt(0.5 * (r + r.transpose()));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("control cost matrix must be positive definite");
  }
}

void check_tuple(const LdsTuple& t, Eigen::Index n, Eigen::Index m) {
  if (t.x.size() != n || t.x_next.size() != n || t.u.size() != m) {
    throw std::invalid_argument("LDS tuple dimensions do not match the model");
  }
}

enum class Variant { mle, mm };

struct Round {
  std::vector<LdsTuple> tuples;
  RiccatiSolution values;  // frozen at collection time; used by mm only
};

double variant_loss(Variant v, const LdsModel& model, const Round& round, LdsModel* grad) {
  return v == Variant::mle ? lds_mle_loss(model, round.tuples, grad)
                           : lds_mm_loss(model, round.tuples, round.values, grad);
}

struct VariantRun {
  LdsModel model;
  std::vector<Round> rounds;
  bool diverged = false;
};

}  // namespace

LdsTruth LdsTruth::alternating(int state_dim, int horizon) {
  LdsTruth t;
  t.a_even = 0.5 * MatrixXd::Identity(state_dim, state_dim);
  t.a_odd = 1.5 * MatrixXd::Identity(state_dim, state_dim);
  t.b = MatrixXd::Ones(state_dim, 1);
  t.horizon = horizon;
  t.initial_state = VectorXd::Ones(state_dim);
  t.terminal_q = MatrixXd::Identity(state_dim, state_dim);
  t.control_r = MatrixXd::Identity(1, 1);
  return t;
}

LdsTruth LdsTruth::time_invariant(MatrixXd a, MatrixXd b, int horizon) {
  const auto n = b.rows();
  LdsTruth t;
  t.a_even = a;
  t.a_odd = std::move(a);
  t.control_r = MatrixXd::Identity(b.cols(), b.cols());
  t.b = std::move(b);
  t.horizon = horizon;
  t.initial_state = VectorXd::Ones(n);
  t.terminal_q = MatrixXd::Identity(n, n);
  return t;
}

void LdsTruth::validate() const {
  const auto n = b.rows();
  if (horizon < 1) throw std::invalid_argument("LdsTruth: horizon must be >= 1");
  if (a_even.rows() != n || a_even.cols() != n || a_odd.rows() != n || a_odd.cols() != n ||
      initial_state.size() != n || terminal_q.rows() != n || terminal_q.cols() != n ||
      control_r.rows() != b.cols()) {
    throw std::invalid_argument("LdsTruth: inconsistent dimensions");
  }
  check_pd(control_r);
}

VectorXd LdsModel::flatten() const {
  VectorXd out(a.size() + b.size());
  out << Eigen::Map<const VectorXd>(a.data(), a.size()),
      Eigen::Map<const VectorXd>(b.data(), b.size());
  return out;
}

LdsModel LdsModel::unflatten(const VectorXd& params, int state_dim, int control_dim) {
  const Eigen::Index na = static_cast<Eigen::Index>(state_dim) * state_dim;
  const Eigen::Index nb = static_cast<Eigen::Index>(state_dim) * control_dim;
  if (params.size() != na + nb) throw std::invalid_argument("LdsModel: wrong parameter count");
  return {Eigen::Map<const MatrixXd>(params.data(), state_dim, state_dim),
          Eigen::Map<const MatrixXd>(params.data() + na, state_dim, control_dim)};
}

RiccatiSolution riccati_solve(const std::function<const MatrixXd&(int)>& a_at,
                              const MatrixXd& b, int horizon, const MatrixXd& terminal_q,
                              const MatrixXd& control_r) {
  check_pd(control_r);
  if (horizon < 1) throw std::invalid_argument("riccati_solve: horizon must be >= 1");
  if (terminal_q.rows() != b.rows() || control_r.rows() != b.cols()) {
    throw std::invalid_argument("riccati_solve: inconsistent dimensions");
  }
  RiccatiSolution sol;
  sol.p.resize(static_cast<std::size_t>(horizon) + 1);
  sol.k.resize(static_cast<std::size_t>(horizon));
  sol.p.back() = terminal_q;
  for (int t = horizon - 1; t >= 0; --t) {
    const MatrixXd& a = a_at(t);
    const MatrixXd& next = sol.p[static_cast<std::size_t>(t) + 1];
    const MatrixXd s = control_r + b.transpose() * next * b;
    MatrixXd k = s.ldlt().solve(b.transpose() * next * a);
    const MatrixXd closed = a - b * k;
    // Joseph form keeps P symmetric positive semidefinite.
    MatrixXd p = k.transpose() * control_r * k + closed.transpose() * next * closed;
    sol.p[static_cast<std::size_t>(t)] = 0.5 * (p + p.transpose());
    sol.k[static_cast<std::size_t>(t)] = std::move(k);
  }
  return sol;
}

RiccatiSolution riccati_solve(const LdsModel& model, int horizon, const MatrixXd& terminal_q,
                              const MatrixXd& control_r) {
  if (model.a.rows() != model.a.cols() || model.a.rows() != model.b.rows()) {
    throw std::invalid_argument("riccati_solve: inconsistent model dimensions");
  }
  return riccati_solve([&](int) -> const MatrixXd& { return model.a; }, model.b, horizon,
                       terminal_q, control_r);
}

RiccatiSolution expert_controller(const LdsTruth& truth) {
  truth.validate();
  return riccati_solve([&](int t) -> const MatrixXd& { return truth.a_at(t); }, truth.b,
                       truth.horizon, truth.terminal_q, truth.control_r);
}

LdsRollout simulate_closed_loop(const LdsTruth& truth, const RiccatiSolution& controller) {
  if (static_cast<int>(controller.k.size()) != truth.horizon) {
    throw std::invalid_argument("simulate_closed_loop: controller horizon mismatch");
  }
  LdsRollout out;
  VectorXd x = truth.initial_state;
  for (int t = 0; t < truth.horizon; ++t) {
    VectorXd u = -controller.k[static_cast<std::size_t>(t)] * x;
    out.cost += u.dot(truth.control_r * u);
    out.states.push_back(x);
    x = truth.a_at(t) * x + truth.b * u;
    out.controls.push_back(std::move(u));
  }
  out.cost += x.dot(truth.terminal_q * x);
  out.states.push_back(std::move(x));
  return out;
}

double lds_mle_loss(const LdsModel& model, std::span<const LdsTuple> data, LdsModel* grad) {
  if (data.empty()) throw std::invalid_argument("lds_mle_loss: empty dataset");
  const double inv_n = 1.0 / static_cast<double>(data.size());
  if (grad) {
    grad->a = MatrixXd::Zero(model.a.rows(), model.a.cols());
    grad->b = MatrixXd::Zero(model.b.rows(), model.b.cols());
  }
  double loss = 0.0;
  for (const auto& t : data) {
    check_tuple(t, model.a.rows(), model.b.cols());
    const VectorXd r = t.x_next - model.a * t.x - model.b * t.u;
    loss += r.squaredNorm() * inv_n;
    if (grad) {
      grad->a.noalias() -= (2.0 * inv_n) * r * t.x.transpose();
      grad->b.noalias() -= (2.0 * inv_n) * r * t.u.transpose();
    }
  }
  return loss;
}

double lds_mm_loss(const LdsModel& model, std::span<const LdsTuple> data,
                   const RiccatiSolution& values, LdsModel* grad) {
  if (data.empty()) throw std::invalid_argument("lds_mm_loss: empty dataset");
  const double inv_n = 1.0 / static_cast<double>(data.size());
  if (grad) {
    grad->a = MatrixXd::Zero(model.a.rows(), model.a.cols());
    grad->b = MatrixXd::Zero(model.b.rows(), model.b.cols());
  }
  double loss = 0.0;
  for (const auto& t : data) {
    check_tuple(t, model.a.rows(), model.b.cols());
    if (t.step < 0 || static_cast<std::size_t>(t.step) + 1 >= values.p.size()) {
      throw std::out_of_range("lds_mm_loss: tuple step outside the value horizon");
    }
    const MatrixXd& p = values.p[static_cast<std::size_t>(t.step) + 1];
    const VectorXd predicted = model.a * t.x + model.b * t.u;
    const VectorXd p_pred = p * predicted;
    const double err = t.x_next.dot(p * t.x_next) - predicted.dot(p_pred);
    loss += err * err * inv_n;
    if (grad) {
      // d/dy (v - y'Py)^2 = -2 (v - y'Py) (P + P') y; P is symmetric.
      const VectorXd g = (-4.0 * inv_n * err) * p_pred;
      grad->a.noalias() += g * t.x.transpose();
      grad->b.noalias() += g * t.u.transpose();
    }
  }
  return loss;
}

Table LdsTrace::table() const {
  Table t;
  t.columns = {"iteration", "cost_mle", "cost_mm", "cost_expert", "loss_mle", "loss_mm"};
  for (const auto& r : rows) {
    t.add_row({static_cast<double>(r.iteration), r.cost_mle, r.cost_mm, r.cost_expert,
               r.loss_mle, r.loss_mm});
  }
  return t;
}

int iterations_to_reach(std::span<const double> costs, double expert, double rel_tol) {
  for (std::size_t i = 0; i < costs.size(); ++i) {
    if (costs[i] <= (1.0 + rel_tol) * expert) return static_cast<int>(i) + 1;
  }
  return static_cast<int>(costs.size()) + 1;
}

LdsTrace run_lds_experiment(const LdsTruth& truth, const LdsExperimentConfig& config) {
  truth.validate();
  if (config.iterations < 1) throw std::invalid_argument("LdsExperimentConfig: iterations must be >= 1");
  if (config.samples_per_iter < 1) {
    throw std::invalid_argument("LdsExperimentConfig: samples_per_iter must be >= 1");
  }
  const int n = truth.state_dim();
  const int m = truth.control_dim();
  const LdsModel initial = config.initial_model
                               ? *config.initial_model
                               : LdsModel{MatrixXd::Identity(n, n), MatrixXd::Ones(n, m)};
  if (initial.a.rows() != n || initial.a.cols() != n || initial.b.rows() != n ||
      initial.b.cols() != m) {
    throw std::invalid_argument("LdsExperimentConfig: initial model has wrong dimensions");
  }

  const LdsRollout expert = simulate_closed_loop(truth, expert_controller(truth));
  FtrlOptions ftrl;
  ftrl.step_size = config.step_size;
  ftrl.step_budget = config.step_budget;

  VariantRun runs[2] = {{initial, {}, false}, {initial, {}, false}};
  const Variant variants[2] = {Variant::mle, Variant::mm};
  const std::uint64_t streams[2] = {kMleStream, kMmStream};

  LdsTrace trace;
  for (int it = 1; it <= config.iterations; ++it) {
    LdsIteration row;
    row.iteration = it;
    row.cost_expert = expert.cost;
    for (int v = 0; v < 2; ++v) {
      VariantRun& run = runs[v];
      RiccatiSolution controller =
          riccati_solve(run.model, truth.horizon, truth.terminal_q, truth.control_r);
      const LdsRollout rollout = simulate_closed_loop(truth, controller);

      Rng rng(derive_seed(config.rng_seed, streams[v], static_cast<std::uint64_t>(it)));
      Round round;
      round.tuples.reserve(config.samples_per_iter);
      for (std::size_t i = 0; i < config.samples_per_iter; ++i) {
        const LdsRollout& source = uniform01(rng) < 0.5 ? rollout : expert;
        const int h = static_cast<int>(uniform01(rng) * truth.horizon);
        const auto hs = static_cast<std::size_t>(h);
        round.tuples.push_back({h, source.states[hs], source.controls[hs], source.states[hs + 1]});
      }
      round.values = std::move(controller);
      const double loss = variant_loss(variants[v], run.model, round, nullptr);
      const double terminal = rollout.states.back().norm();
      if (v == 0) {
        row.cost_mle = rollout.cost;
        row.loss_mle = loss;
        row.terminal_norm_mle = terminal;
      } else {
        row.cost_mm = rollout.cost;
        row.loss_mm = loss;
        row.terminal_norm_mm = terminal;
      }
      run.rounds.push_back(std::move(round));
      if (run.diverged) continue;

      CumulativeLoss cumulative = [&](const VectorXd& theta, VectorXd& g) {
        const LdsModel candidate = LdsModel::unflatten(theta, n, m);
        double total = 0.0;
        LdsModel round_grad;
        for (const auto& r : run.rounds) {
          total += variant_loss(variants[v], candidate, r, &round_grad);
          g += round_grad.flatten();
        }
        return total;
      };
      try {
        const FtrlResult fit =
            ftrl_step(run.model.flatten(), cumulative, config.reg_strength, ftrl);
        run.model = LdsModel::unflatten(fit.params, n, m);
      } catch (const std::runtime_error&) {
        run.diverged = true;
      }
    }
    trace.rows.push_back(row);
  }
  trace.final_mle = runs[0].model;
  trace.final_mm = runs[1].model;
  trace.diverged_mle = runs[0].diverged;
  trace.diverged_mm = runs[1].diverged;
  return trace;
}

}  // namespace lamps
