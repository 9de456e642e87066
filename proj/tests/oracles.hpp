#pragma once

// Reference computations used only by the tests. They deliberately avoid the
// library's solvers: values by fixed-point iteration, occupancy by truncated
// forward propagation, optima by enumeration, LQ optima by batch least squares.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Row s*A + a of `kernel` is M(.|s,a). Fixed-point iteration of
/// V = c_pi + gamma P_pi V until the update is below 1e-15 or `iters` sweeps.
inline VectorXd iterate_values(const MatrixXd& cost, const MatrixXd& kernel,
                               const MatrixXd& policy, double gamma, int iters = 100000) {
  const auto S = cost.rows();
  const auto A = cost.cols();
  VectorXd v = VectorXd::Zero(S);
  for (int it = 0; it < iters; ++it) {
    VectorXd next = VectorXd::Zero(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      for (Eigen::Index a = 0; a < A; ++a) {
        const double q = cost(s, a) + gamma * kernel.row(s * A + a).dot(v);
        next(s) += policy(s, a) * q;
      }
    }
    const double change = (next - v).cwiseAbs().maxCoeff();
    v = next;
    if (change < 1e-15) break;
  }
  return v;
}

inline MatrixXd q_from_values(const MatrixXd& cost, const MatrixXd& kernel, const VectorXd& v,
                              double gamma) {
  const auto S = cost.rows();
  const auto A = cost.cols();
  MatrixXd q(S, A);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index a = 0; a < A; ++a) q(s, a) = cost(s, a) + gamma * kernel.row(s * A + a).dot(v);
  }
  return q;
}

/// (1 - gamma) sum_{h=1}^{horizon} gamma^{h-1} D^h, propagated forward.
inline MatrixXd truncated_occupancy(const MatrixXd& kernel, const MatrixXd& policy,
                                    const VectorXd& omega, double gamma, int horizon = 500) {
  const auto S = policy.rows();
  const auto A = policy.cols();
  MatrixXd occ = MatrixXd::Zero(S, A);
  VectorXd d = omega;
  double weight = 1.0 - gamma;
  for (int h = 0; h < horizon; ++h) {
    VectorXd next = VectorXd::Zero(S);
    for (Eigen::Index s = 0; s < S; ++s) {
      for (Eigen::Index a = 0; a < A; ++a) {
        const double mass = d(s) * policy(s, a);
        occ(s, a) += weight * mass;
        next += mass * kernel.row(s * A + a).transpose();
      }
    }
    d = next;
    weight *= gamma;
  }
  return occ;
}

/// Mean and standard error of truncated discounted cost rollouts from state s.
struct MonteCarlo {
  double mean = 0.0;
  double stderr_ = 0.0;
};

inline MonteCarlo monte_carlo_value(const MatrixXd& cost, const MatrixXd& kernel,
                                    const MatrixXd& policy, double gamma, int start,
                                    int trajectories, int horizon, std::uint64_t seed) {
  const auto S = static_cast<int>(cost.rows());
  const auto A = static_cast<int>(cost.cols());
  // Row-major cumulative tables for inverse-CDF draws.
  std::vector<double> pi_cdf(static_cast<std::size_t>(S * A));
  std::vector<double> m_cdf(static_cast<std::size_t>(S * A * S));
  for (int s = 0; s < S; ++s) {
    double acc = 0.0;
    for (int a = 0; a < A; ++a) pi_cdf[static_cast<std::size_t>(s * A + a)] = acc += policy(s, a);
    for (int a = 0; a < A; ++a) {
      double m = 0.0;
      for (int n = 0; n < S; ++n) {
        m_cdf[static_cast<std::size_t>((s * A + a) * S + n)] = m += kernel(s * A + a, n);
      }
    }
  }
  std::mt19937_64 rng(seed);
  auto draw = [&](const double* cdf, int n) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    for (int i = 0; i < n - 1; ++i) {
      if (u < cdf[i]) return i;
    }
    return n - 1;
  };
  double sum = 0.0;
  double sumsq = 0.0;
  for (int t = 0; t < trajectories; ++t) {
    int s = start;
    double total = 0.0;
    double disc = 1.0;
    for (int h = 0; h < horizon; ++h) {
      const int a = draw(&pi_cdf[static_cast<std::size_t>(s * A)], A);
      total += disc * cost(s, a);
      disc *= gamma;
      s = draw(&m_cdf[static_cast<std::size_t>((s * A + a) * S)], S);
    }
    sum += total;
    sumsq += total * total;
  }
  MonteCarlo mc;
  mc.mean = sum / trajectories;
  const double var = (sumsq / trajectories - mc.mean * mc.mean) * trajectories / (trajectories - 1.0);
  mc.stderr_ = std::sqrt(std::max(var, 0.0) / trajectories);
  return mc;
}

/// Smallest omega-weighted value over all deterministic policies.
inline double best_deterministic_performance(const MatrixXd& cost, const MatrixXd& kernel,
                                             const VectorXd& omega, double gamma,
                                             std::vector<int>* best_actions = nullptr) {
  const auto S = static_cast<int>(cost.rows());
  const auto A = static_cast<int>(cost.cols());
  std::vector<int> actions(static_cast<std::size_t>(S), 0);
  double best = INFINITY;
  while (true) {
    MatrixXd pi = MatrixXd::Zero(S, A);
    for (int s = 0; s < S; ++s) pi(s, actions[static_cast<std::size_t>(s)]) = 1.0;
    const double j = omega.dot(iterate_values(cost, kernel, pi, gamma));
    if (j < best) {
      best = j;
      if (best_actions) *best_actions = actions;
    }
    int pos = 0;
    while (pos < S && ++actions[static_cast<std::size_t>(pos)] == A) {
      actions[static_cast<std::size_t>(pos)] = 0;
      ++pos;
    }
    if (pos == S) break;
  }
  return best;
}

/// Optimal open-loop controls of x' = A_t x + B u with cost
/// sum_t x_t'Q x_t + u_t'R u_t + x_H' Q_H x_H, from the stacked quadratic.
struct BatchLq {
  std::vector<VectorXd> controls;
  double cost = 0.0;
};

inline BatchLq batch_lq(const std::function<MatrixXd(int)>& a_at, const MatrixXd& b,
                        const MatrixXd& q, const MatrixXd& r, const MatrixXd& q_terminal,
                        int horizon, const VectorXd& x0) {
  const auto n = b.rows();
  const auto m = b.cols();
  // x_t = phi_t x0 + sum_{k<t} gamma_{t,k} u_k
  std::vector<MatrixXd> phi(static_cast<std::size_t>(horizon) + 1);
  std::vector<MatrixXd> gam(static_cast<std::size_t>(horizon) + 1);
  phi[0] = MatrixXd::Identity(n, n);
  gam[0] = MatrixXd::Zero(n, m * horizon);
  for (int t = 0; t < horizon; ++t) {
    const MatrixXd at = a_at(t);
    phi[t + 1] = at * phi[t];
    gam[t + 1] = at * gam[t];
    gam[t + 1].block(0, m * t, n, m) += b;
  }
  MatrixXd hess = MatrixXd::Zero(m * horizon, m * horizon);
  VectorXd lin = VectorXd::Zero(m * horizon);
  double constant = 0.0;
  for (int t = 0; t <= horizon; ++t) {
    const MatrixXd& w = t == horizon ? q_terminal : q;
    hess += gam[t].transpose() * w * gam[t];
    lin += gam[t].transpose() * w * phi[t] * x0;
    constant += x0.dot(phi[t].transpose() * w * phi[t] * x0);
  }
  for (int t = 0; t < horizon; ++t) hess.block(m * t, m * t, m, m) += r;
  const VectorXd u = hess.ldlt().solve(-lin);
  BatchLq out;
  out.cost = u.dot(hess * u) + 2.0 * lin.dot(u) + constant;
  for (int t = 0; t < horizon; ++t) out.controls.push_back(u.segment(m * t, m));
  return out;
}

/// Central-difference gradient of f at x.
inline VectorXd numeric_gradient(const std::function<double(const VectorXd&)>& f,
                                 const VectorXd& x, double step = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd hi = x;
    VectorXd lo = x;
    hi(i) += step;
    lo(i) -= step;
    g(i) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

/// Direct shooting: gradient descent on f with Barzilai-Borwein steps and
/// central-difference gradients, from x0.
inline VectorXd shooting_minimize(const std::function<double(const VectorXd&)>& f, VectorXd x,
                                  int iters = 3000, double first_step = 1e-3) {
  VectorXd g = numeric_gradient(f, x);
  double step = first_step;
  for (int it = 0; it < iters && g.norm() > 1e-12; ++it) {
    VectorXd next = x - step * g;
    while (f(next) > f(x) && step > 1e-16) {
      step *= 0.5;
      next = x - step * g;
    }
    const VectorXd g_next = numeric_gradient(f, next);
    const VectorXd dx = next - x;
    const VectorXd dg = g_next - g;
    const double curvature = dx.dot(dg);
    step = curvature > 0.0 ? dx.squaredNorm() / curvature : first_step;
    x = next;
    g = g_next;
  }
  return x;
}

}  // namespace oracle
