#include "lamps/ilqr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lamps/rng.hpp"

namespace lamps {
namespace {

constexpr double kMinRegularization = 1e-6;
constexpr double kMaxRegularization = 1e10;
constexpr std::uint64_t kLazyStream = 31;
constexpr std::uint64_t kFullStream = 32;
constexpr std::uint64_t kNuEvalStream = 33;

struct BackwardResult {
  std::vector<VectorXd> feedforward;
  std::vector<MatrixXd> gains;
  double expected_gain = 0.0;  // predicted first-order decrease
  bool ok = true;
};

// Second-order backward pass about (states, controls) with value-Hessian
// regularization `mu`.
BackwardResult backward_pass(const NonlinearSystem& sys, const VectorXd& theta,
                             const std::vector<VectorXd>& states,
                             const std::vector<VectorXd>& controls, double mu) {
  const int H = sys.horizon;
  const auto n = sys.state_dim;
  BackwardResult out;
  out.feedforward.resize(static_cast<std::size_t>(H));
  out.gains.resize(static_cast<std::size_t>(H));
  VectorXd vx = 2.0 * sys.q_terminal * states.back();
  MatrixXd vxx = 2.0 * sys.q_terminal;
  MatrixXd fx;
  MatrixXd fu;
  const MatrixXd reg = mu * MatrixXd::Identity(n, n);
  for (int h = H - 1; h >= 0; --h) {
    const auto hs = static_cast<std::size_t>(h);
    const VectorXd& x = states[hs];
    const VectorXd& u = controls[hs];
    sys.linearize(x, u, theta, fx, fu);
    const VectorXd qx = 2.0 * sys.q * x + fx.transpose() * vx;
    const VectorXd qu = 2.0 * sys.r * u + fu.transpose() * vx;
    const MatrixXd qxx = 2.0 * sys.q + fx.transpose() * vxx * fx;
    const MatrixXd vreg = vxx + reg;
    MatrixXd quu = 2.0 * sys.r + fu.transpose() * vreg * fu;
    quu = 0.5 * (quu + quu.transpose());
    const MatrixXd qux = fu.transpose() * vreg * fx;
    Eigen::LLT<MatrixXd> llt(quu);
    if (llt.info() != Eigen::Success) {
      out.ok = false;
      return out;
    }
    VectorXd k = -llt.solve(qu);
    MatrixXd K = -llt.solve(qux);
    out.expected_gain += k.dot(qu);
    vx = qx + K.transpose() * quu * k + K.transpose() * qu + qux.transpose() * k;
    vxx = qxx + K.transpose() * quu * K + K.transpose() * qux + qux.transpose() * K;
    vxx = 0.5 * (vxx + vxx.transpose());
    out.feedforward[hs] = std::move(k);
    out.gains[hs] = std::move(K);
  }
  return out;
}

double trajectory_cost(const NonlinearSystem& sys, const std::vector<VectorXd>& states,
                       const std::vector<VectorXd>& controls) {
  double c = 0.0;
  for (std::size_t h = 0; h < controls.size(); ++h) c += sys.stage_cost(states[h], controls[h]);
  return c + sys.terminal_cost(states.back());
}

VectorXd default_theta() { return (VectorXd(3) << 5.0, 2.0, 0.5).finished(); }

}  // namespace

void NonlinearSystem::validate() const {
  if (state_dim < 1 || control_dim < 1 || horizon < 1) {
    throw std::invalid_argument("NonlinearSystem: dimensions and horizon must be positive");
  }
  if (!dynamics) throw std::invalid_argument("NonlinearSystem: missing dynamics");
  if (q.rows() != state_dim || q.cols() != state_dim || q_terminal.rows() != state_dim ||
      q_terminal.cols() != state_dim || r.rows() != control_dim || r.cols() != control_dim ||
      initial_state.size() != state_dim) {
    throw std::invalid_argument("NonlinearSystem: cost or initial state dimensions mismatch");
  }
  Eigen::LLT<MatrixXd> llt(0.5 * (r + r.transpose()));
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("NonlinearSystem: control cost must be positive definite");
  }
}

VectorXd NonlinearSystem::step(const VectorXd& x, const VectorXd& u, const VectorXd& theta) const {
  return dynamics(x, u, theta);
}

void NonlinearSystem::linearize(const VectorXd& x, const VectorXd& u, const VectorXd& theta,
                                MatrixXd& fx, MatrixXd& fu) const {
  if (jacobian) {
    jacobian(x, u, theta, fx, fu);
    return;
  }
  constexpr double kStep = 1e-6;
  fx.resize(state_dim, state_dim);
  fu.resize(state_dim, control_dim);
  for (int i = 0; i < state_dim; ++i) {
    VectorXd hi = x;
    VectorXd lo = x;
    hi(i) += kStep;
    lo(i) -= kStep;
    fx.col(i) = (dynamics(hi, u, theta) - dynamics(lo, u, theta)) / (2.0 * kStep);
  }
  for (int i = 0; i < control_dim; ++i) {
    VectorXd hi = u;
    VectorXd lo = u;
    hi(i) += kStep;
    lo(i) -= kStep;
    fu.col(i) = (dynamics(x, hi, theta) - dynamics(x, lo, theta)) / (2.0 * kStep);
  }
}

double NonlinearSystem::stage_cost(const VectorXd& x, const VectorXd& u) const {
  return x.dot(q * x) + u.dot(r * u);
}

double NonlinearSystem::terminal_cost(const VectorXd& x) const { return x.dot(q_terminal * x); }

NonlinearSystem NonlinearSystem::pendulum(int horizon, double dt) {
  NonlinearSystem sys;
  sys.state_dim = 2;
  sys.control_dim = 1;
  sys.dynamics = [dt](const VectorXd& x, const VectorXd& u, const VectorXd& th) {
    VectorXd next(2);
    next(0) = x(0) + dt * x(1);
    next(1) = x(1) + dt * (th(0) * std::sin(x(0)) + th(1) * u(0) - th(2) * x(1));
    return next;
  };
  sys.jacobian = [dt](const VectorXd& x, const VectorXd&, const VectorXd& th, MatrixXd& fx,
                      MatrixXd& fu) {
    fx.resize(2, 2);
    fx << 1.0, dt, dt * th(0) * std::cos(x(0)), 1.0 - dt * th(2);
    fu.resize(2, 1);
    fu << 0.0, dt * th(1);
  };
  sys.features = [dt](const VectorXd& x, const VectorXd& u, MatrixXd& phi, VectorXd& offset) {
    phi = MatrixXd::Zero(2, 3);
    phi(1, 0) = dt * std::sin(x(0));
    phi(1, 1) = dt * u(0);
    phi(1, 2) = -dt * x(1);
    offset.resize(2);
    offset << x(0) + dt * x(1), x(1);
  };
  sys.true_theta = (VectorXd(3) << 9.81, 1.0, 0.1).finished();
  sys.horizon = horizon;
  sys.q = (VectorXd(2) << 1.0, 0.1).finished().asDiagonal();
  sys.r = 0.01 * MatrixXd::Identity(1, 1);
  sys.q_terminal = (VectorXd(2) << 10.0, 1.0).finished().asDiagonal();
  sys.initial_state = (VectorXd(2) << 0.3, 0.0).finished();
  return sys;
}

NonlinearSystem NonlinearSystem::linear(MatrixXd a, MatrixXd b, MatrixXd q, MatrixXd r,
                                        MatrixXd q_terminal, int horizon,
                                        VectorXd initial_state) {
  NonlinearSystem sys;
  sys.state_dim = static_cast<int>(a.rows());
  sys.control_dim = static_cast<int>(b.cols());
  sys.dynamics = [a, b](const VectorXd& x, const VectorXd& u, const VectorXd&) {
    return VectorXd(a * x + b * u);
  };
  sys.jacobian = [a, b](const VectorXd&, const VectorXd&, const VectorXd&, MatrixXd& fx,
                        MatrixXd& fu) {
    fx = a;
    fu = b;
  };
  sys.true_theta = VectorXd(0);
  sys.horizon = horizon;
  sys.q = std::move(q);
  sys.r = std::move(r);
  sys.q_terminal = std::move(q_terminal);
  sys.initial_state = std::move(initial_state);
  return sys;
}

VectorXd TrajectoryPolicy::act(int h, const VectorXd& x) const {
  const auto hs = static_cast<std::size_t>(h);
  return controls[hs] + gains[hs] * (x - states[hs]);
}

PlannerStats& PlannerStats::operator+=(const PlannerStats& other) {
  backward_passes += other.backward_passes;
  forward_passes += other.forward_passes;
  return *this;
}

TrajectoryPolicy open_loop_trajectory(const NonlinearSystem& system, const VectorXd& theta,
                                      std::vector<VectorXd> controls) {
  if (static_cast<int>(controls.size()) != system.horizon) {
    throw std::invalid_argument("open_loop_trajectory: one control per step required");
  }
  TrajectoryPolicy traj;
  traj.states.push_back(system.initial_state);
  for (const auto& u : controls) traj.states.push_back(system.step(traj.states.back(), u, theta));
  traj.controls = std::move(controls);
  traj.gains.assign(traj.controls.size(),
                    MatrixXd::Zero(system.control_dim, system.state_dim));
  return traj;
}

PlannerResult ilqr_full(const VectorXd& theta, const NonlinearSystem& system,
                        const std::vector<VectorXd>& initial_controls, double conv_tol,
                        int max_iters) {
  system.validate();
  if (!(conv_tol > 0.0)) throw std::invalid_argument("ilqr_full: conv_tol must be positive");
  if (max_iters < 1) throw std::invalid_argument("ilqr_full: max_iters must be >= 1");
  const int H = system.horizon;

  PlannerResult result;
  result.policy = open_loop_trajectory(system, theta, initial_controls);
  ++result.stats.forward_passes;
  double cost = trajectory_cost(system, result.policy.states, result.policy.controls);
  if (!std::isfinite(cost)) throw std::runtime_error("ilqr_full: non-finite initial cost");

  double mu = 0.0;
  static constexpr double kStepSizes[] = {1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125,
                                          0.015625, 0.0078125, 0.00390625, 0.001953125};
  for (int iter = 0; iter < max_iters; ++iter) {
    ++result.iterations;
    BackwardResult bw = backward_pass(system, theta, result.policy.states,
                                      result.policy.controls, mu);
    ++result.stats.backward_passes;
    if (!bw.ok) {
      mu = std::max(kMinRegularization, mu * 10.0);
      if (mu > kMaxRegularization) break;
      continue;
    }
    // Keep the gains of the latest backward pass as the feedback policy.
    result.policy.gains = bw.gains;

    bool accepted = false;
    double improvement = 0.0;
    for (double alpha : kStepSizes) {
      std::vector<VectorXd> xs{system.initial_state};
      std::vector<VectorXd> us;
      xs.reserve(static_cast<std::size_t>(H) + 1);
      us.reserve(static_cast<std::size_t>(H));
      for (int h = 0; h < H; ++h) {
        const auto hs = static_cast<std::size_t>(h);
        VectorXd u = result.policy.controls[hs] + alpha * bw.feedforward[hs] +
                     bw.gains[hs] * (xs.back() - result.policy.states[hs]);
        xs.push_back(system.step(xs.back(), u, theta));
        us.push_back(std::move(u));
      }
      ++result.stats.forward_passes;
      const double trial = trajectory_cost(system, xs, us);
      if (std::isfinite(trial) && trial <= cost) {
        improvement = cost - trial;
        cost = trial;
        result.policy.states = std::move(xs);
        result.policy.controls = std::move(us);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      // No step helped: either converged to rounding or the model needs damping.
      if (bw.expected_gain > -conv_tol) break;
      mu = std::max(kMinRegularization, mu * 10.0);
      if (mu > kMaxRegularization) break;
      continue;
    }
    mu = mu / 10.0 < kMinRegularization ? 0.0 : mu / 10.0;
    if (improvement < conv_tol) break;
  }
  if (!std::isfinite(cost)) throw std::runtime_error("ilqr_full: cost diverged");
  result.cost = cost;
  return result;
}

PlannerResult lazy_backward_pass(const VectorXd& theta, const NonlinearSystem& system,
                                 const TrajectoryPolicy& desired) {
  system.validate();
  if (desired.horizon() != system.horizon ||
      desired.states.size() != static_cast<std::size_t>(system.horizon) + 1) {
    throw std::invalid_argument("lazy_backward_pass: desired trajectory has wrong length");
  }
  BackwardResult bw = backward_pass(system, theta, desired.states, desired.controls, 0.0);
  if (!bw.ok) throw std::runtime_error("lazy_backward_pass: control Hessian not positive definite");
  PlannerResult result;
  result.stats.backward_passes = 1;
  result.iterations = 1;
  result.policy.states = desired.states;
  result.policy.gains = std::move(bw.gains);
  result.policy.controls.reserve(desired.controls.size());
  for (std::size_t h = 0; h < desired.controls.size(); ++h) {
    result.policy.controls.push_back(desired.controls[h] + bw.feedforward[h]);
  }
  for (const auto& g : result.policy.gains) {
    if (!g.allFinite()) throw std::runtime_error("lazy_backward_pass: non-finite gains");
  }
  result.cost = rollout_cost(system, theta, result.policy);
  return result;
}

double policy_value(const NonlinearSystem& system, const VectorXd& theta,
                    const TrajectoryPolicy& policy, int h, const VectorXd& x) {
  VectorXd state = x;
  double cost = 0.0;
  for (int t = h; t < system.horizon; ++t) {
    const VectorXd u = policy.act(t, state);
    cost += system.stage_cost(state, u);
    state = system.step(state, u, theta);
  }
  return cost + system.terminal_cost(state);
}

double rollout_cost(const NonlinearSystem& system, const VectorXd& theta,
                    const TrajectoryPolicy& policy) {
  return policy_value(system, theta, policy, 0, system.initial_state);
}

double local_disadvantage(const NonlinearSystem& system, const VectorXd& theta,
                          const TrajectoryPolicy& policy, int h, const VectorXd& x) {
  const int m = system.control_dim;
  const VectorXd u0 = policy.act(h, x);
  auto q_value = [&](const VectorXd& u) {
    return system.stage_cost(x, u) + policy_value(system, theta, policy, h + 1,
                                                  system.step(x, u, theta));
  };
  constexpr double kStep = 1e-4;
  const double center = q_value(u0);
  VectorXd grad(m);
  MatrixXd hess(m, m);
  for (int i = 0; i < m; ++i) {
    VectorXd up = u0;
    VectorXd dn = u0;
    up(i) += kStep;
    dn(i) -= kStep;
    const double fp = q_value(up);
    const double fm = q_value(dn);
    grad(i) = (fp - fm) / (2.0 * kStep);
    hess(i, i) = (fp - 2.0 * center + fm) / (kStep * kStep);
    for (int j = 0; j < i; ++j) {
      VectorXd pp = u0, pm = u0, mp = u0, mm = u0;
      pp(i) += kStep; pp(j) += kStep;
      pm(i) += kStep; pm(j) -= kStep;
      mp(i) -= kStep; mp(j) += kStep;
      mm(i) -= kStep; mm(j) -= kStep;
      hess(i, j) = hess(j, i) =
          (q_value(pp) - q_value(pm) - q_value(mp) + q_value(mm)) / (4.0 * kStep * kStep);
    }
  }
  Eigen::LLT<MatrixXd> llt(hess);
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
  return std::max(0.0, 0.5 * grad.dot(llt.solve(grad)));
}

double mean_local_disadvantage(const NonlinearSystem& system, const VectorXd& theta,
                               const TrajectoryPolicy& policy,
                               const std::vector<StateSample>& states) {
  if (states.empty()) throw std::invalid_argument("mean_local_disadvantage: no states");
  double total = 0.0;
  for (const auto& s : states) {
    total += local_disadvantage(system, theta, policy, s.step, s.state);
  }
  return total / static_cast<double>(states.size());
}

VectorXd fit_theta_least_squares(const NonlinearSystem& system,
                                 const std::vector<std::vector<IlqrTransition>>& rounds,
                                 double reg_strength) {
  if (!system.features) throw std::invalid_argument("fit_theta_least_squares: no feature map");
  if (!(reg_strength > 0.0)) {
    throw std::invalid_argument("fit_theta_least_squares: reg_strength must be positive");
  }
  const auto p = system.true_theta.size();
  MatrixXd normal = reg_strength * MatrixXd::Identity(p, p);
  VectorXd rhs = VectorXd::Zero(p);
  MatrixXd phi;
  VectorXd offset;
  bool any = false;
  for (const auto& round : rounds) {
    if (round.empty()) continue;
    any = true;
    // Each round contributes its mean squared error.
    const double w = 2.0 / static_cast<double>(round.size());
    for (const auto& t : round) {
      system.features(t.x, t.u, phi, offset);
      normal.noalias() += w * phi.transpose() * phi;
      rhs.noalias() += w * phi.transpose() * (t.x_next - offset);
    }
  }
  if (!any) throw std::invalid_argument("fit_theta_least_squares: empty dataset");
  return normal.ldlt().solve(rhs);
}

TrajectoryPolicy hold_trajectory(const NonlinearSystem& system) {
  TrajectoryPolicy traj;
  traj.states.assign(static_cast<std::size_t>(system.horizon) + 1,
                     VectorXd::Zero(system.state_dim));
  traj.controls.assign(static_cast<std::size_t>(system.horizon),
                       VectorXd::Zero(system.control_dim));
  traj.gains.assign(static_cast<std::size_t>(system.horizon),
                    MatrixXd::Zero(system.control_dim, system.state_dim));
  return traj;
}

Table IlqrTrace::table() const {
  Table t;
  t.columns = {"iteration",           "real_cost_lazy",       "real_cost_full",
               "backward_passes_lazy", "backward_passes_full", "j_pihat_in_model",
               "j_expert_in_model"};
  for (const auto& r : rows) {
    t.add_row({static_cast<double>(r.iteration), r.real_cost_lazy, r.real_cost_full,
               static_cast<double>(r.backward_passes_lazy),
               static_cast<double>(r.backward_passes_full), r.j_pihat_in_model,
               r.j_expert_in_model});
  }
  return t;
}

IlqrTrace run_ilqr_experiment(const NonlinearSystem& system, const TrajectoryPolicy& desired,
                              const IlqrExperimentConfig& config) {
  system.validate();
  if (!system.features) throw std::invalid_argument("run_ilqr_experiment: system needs a feature map");
  if (config.iterations < 1 || config.samples_per_iter < 1) {
    throw std::invalid_argument("IlqrExperimentConfig: iterations and samples must be >= 1");
  }
  const int H = system.horizon;
  const std::vector<VectorXd> zero_controls(static_cast<std::size_t>(H),
                                            VectorXd::Zero(system.control_dim));
  const PlannerResult expert =
      ilqr_full(system.true_theta, system, zero_controls, config.conv_tol, config.max_ilqr_iters);

  IlqrTrace trace;
  trace.expert_cost = rollout_cost(system, system.true_theta, expert.policy);

  // Fixed exploration states for the disadvantage diagnostic.
  std::vector<StateSample> nu_states;
  {
    Rng rng(derive_seed(config.rng_seed, kNuEvalStream));
    for (int h = 0; h < H; ++h) {
      VectorXd x = desired.states[static_cast<std::size_t>(h)];
      for (int i = 0; i < system.state_dim; ++i) x(i) += config.nu_state_std * standard_normal(rng);
      nu_states.push_back({h, std::move(x)});
    }
  }

  struct Run {
    VectorXd theta;
    std::vector<std::vector<IlqrTransition>> rounds;
    PlannerStats stats;
    std::uint64_t stream;
    bool lazy;
  };
  const VectorXd theta0 = config.initial_theta.size() > 0 ? config.initial_theta : default_theta();
  if (theta0.size() != system.true_theta.size()) {
    throw std::invalid_argument("IlqrExperimentConfig: initial_theta has wrong length");
  }
  Run runs[2] = {{theta0, {}, {}, kLazyStream, true}, {theta0, {}, {}, kFullStream, false}};

  for (int it = 1; it <= config.iterations; ++it) {
    IlqrIteration row;
    row.iteration = it;
    for (Run& run : runs) {
      const PlannerResult planned =
          run.lazy ? lazy_backward_pass(run.theta, system, desired)
                   : ilqr_full(run.theta, system, zero_controls, config.conv_tol,
                               config.max_ilqr_iters);
      run.stats += planned.stats;
      const TrajectoryPolicy& policy = planned.policy;
      const double real = rollout_cost(system, system.true_theta, policy);
      const double in_model = rollout_cost(system, run.theta, policy);
      const double expert_in_model = rollout_cost(system, run.theta, expert.policy);
      if (run.lazy) {
        row.real_cost_lazy = real;
        row.backward_passes_lazy = run.stats.backward_passes;
        row.j_pihat_in_model = in_model;
        row.j_expert_in_model = expert_in_model;
        row.disadvantage_lazy = mean_local_disadvantage(system, run.theta, policy, nu_states);
      } else {
        row.real_cost_full = real;
        row.backward_passes_full = run.stats.backward_passes;
        row.j_pihat_in_model_full = in_model;
        row.j_expert_in_model_full = expert_in_model;
      }

      // Noisy rollout of the policy in the true system.
      Rng rng(derive_seed(config.rng_seed, run.stream, static_cast<std::uint64_t>(it)));
      auto noisy_step = [&](const VectorXd& x, const VectorXd& u) {
        VectorXd next = system.step(x, u, system.true_theta);
        for (int i = 0; i < system.state_dim; ++i) {
          next(i) += config.process_noise_std * standard_normal(rng);
        }
        return next;
      };
      std::vector<VectorXd> xs{system.initial_state};
      std::vector<VectorXd> us;
      for (int h = 0; h < H; ++h) {
        us.push_back(policy.act(h, xs.back()));
        xs.push_back(noisy_step(xs.back(), us.back()));
      }
      std::vector<IlqrTransition> round;
      round.reserve(config.samples_per_iter);
      for (std::size_t i = 0; i < config.samples_per_iter; ++i) {
        if (uniform01(rng) < 0.5) {
          const auto h = static_cast<std::size_t>(uniform01(rng) * H);
          round.push_back({xs[h], us[h], xs[h + 1]});
        } else {
          const auto h = static_cast<std::size_t>(uniform01(rng) * H);
          VectorXd x = desired.states[h];
          VectorXd u = desired.controls[h];
          for (int j = 0; j < system.state_dim; ++j) x(j) += config.nu_state_std * standard_normal(rng);
          for (int j = 0; j < system.control_dim; ++j) u(j) += config.nu_control_std * standard_normal(rng);
          VectorXd next = noisy_step(x, u);
          round.push_back({std::move(x), std::move(u), std::move(next)});
        }
      }
      run.rounds.push_back(std::move(round));
      run.theta = fit_theta_least_squares(system, run.rounds, config.reg_strength);
    }
    trace.rows.push_back(row);
  }
  trace.final_theta_lazy = runs[0].theta;
  trace.final_theta_full = runs[1].theta;
  return trace;
}

}  // namespace lamps
