#include "lamps/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lamps {
namespace {

// Rows within rounding of 1 are left untouched, so renormalizing is idempotent
// and serialized tables reload bit for bit.
bool needs_rescale(double sum, Eigen::Index width) {
  return std::abs(sum - 1.0) >
         4.0 * static_cast<double>(width) * std::numeric_limits<double>::epsilon();
}

// Rows must be nonnegative and sum to 1 within kProbTolerance; accepted rows
// are rescaled to sum to 1.
void normalize_rows(MatrixXd& m, const char* what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (!m.row(r).allFinite() || (m.row(r).array() < 0.0).any()) {
      throw std::invalid_argument(std::string(what) + ": row " +
                                  std::to_string(r) +
                                  " has negative or non-finite entries");
    }
    const double sum = m.row(r).sum();
    if (std::abs(sum - 1.0) > kProbTolerance) {
      throw std::invalid_argument(std::string(what) + ": row " +
                                  std::to_string(r) + " sums to " +
                                  std::to_string(sum));
    }
    if (needs_rescale(sum, m.cols())) m.row(r) /= sum;
  }
}

void check_dims(const TabularMdp& mdp, const TransitionModel& model) {
  if (model.num_states() != mdp.num_states() ||
      model.num_actions() != mdp.num_actions()) {
    throw std::invalid_argument("model dimensions do not match the MDP");
  }
}

void check_dims(const TabularMdp& mdp, const TransitionModel& model,
                const Policy& policy) {
  check_dims(mdp, model);
  if (policy.num_states() != mdp.num_states() ||
      policy.num_actions() != mdp.num_actions()) {
    throw std::invalid_argument("policy dimensions do not match the MDP");
  }
}

// P_pi(s, s') = sum_a pi(a|s) M(s'|s,a).
MatrixXd policy_kernel(const TransitionModel& model, const Policy& policy) {
  const int S = model.num_states();
  const int A = model.num_actions();
  MatrixXd p = MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double w = policy.prob(s, a);
      if (w != 0.0) p.row(s) += w * model.row(s, a);
    }
  }
  return p;
}

MatrixXd q_from_v(const TabularMdp& mdp, const TransitionModel& model,
                  const VectorXd& v) {
  return mdp.cost() + mdp.discount() * model.expected_next(v);
}

MatrixXd dirichlet_rows(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = -std::log(1.0 - uniform01(rng));
    }
    m.row(r) /= m.row(r).sum();
  }
  return m;
}

}  // namespace

TransitionModel::TransitionModel(int num_states, int num_actions,
                                 MatrixXd kernel)
    : num_states_(num_states), num_actions_(num_actions), kernel_(std::move(kernel)) {
  if (num_states <= 0 || num_actions <= 0) {
    throw std::invalid_argument("TransitionModel: empty state or action set");
  }
  if (kernel_.rows() != num_states * num_actions || kernel_.cols() != num_states) {
    throw std::invalid_argument("TransitionModel: kernel must be (S*A) x S");
  }
  normalize_rows(kernel_, "TransitionModel");
}

TransitionModel TransitionModel::uniform(int num_states, int num_actions) {
  return {num_states, num_actions,
          MatrixXd::Constant(num_states * num_actions, num_states,
                             1.0 / num_states)};
}

TransitionModel TransitionModel::deterministic(int num_states, int num_actions,
                                               std::span<const int> next) {
  if (static_cast<int>(next.size()) != num_states * num_actions) {
    throw std::invalid_argument("deterministic model: need one successor per (s, a)");
  }
  MatrixXd kernel = MatrixXd::Zero(num_states * num_actions, num_states);
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (next[i] < 0 || next[i] >= num_states) {
      throw std::invalid_argument("deterministic model: successor out of range");
    }
    kernel(static_cast<Eigen::Index>(i), next[i]) = 1.0;
  }
  return {num_states, num_actions, std::move(kernel)};
}

MatrixXd TransitionModel::expected_next(const VectorXd& values) const {
  if (values.size() != num_states_) {
    throw std::invalid_argument("expected_next: value vector has wrong size");
  }
  const VectorXd flat = kernel_ * values;
  MatrixXd out(num_states_, num_actions_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) out(s, a) = flat(row_index(s, a));
  }
  return out;
}

MatrixXd TransitionModel::l1_distance(const TransitionModel& other) const {
  if (other.num_states_ != num_states_ || other.num_actions_ != num_actions_) {
    throw std::invalid_argument("l1_distance: dimension mismatch");
  }
  MatrixXd out(num_states_, num_actions_);
  for (int s = 0; s < num_states_; ++s) {
    for (int a = 0; a < num_actions_; ++a) {
      out(s, a) = (row(s, a) - other.row(s, a)).cwiseAbs().sum();
    }
  }
  return out;
}

Policy::Policy(MatrixXd action_dist) : dist_(std::move(action_dist)) {
  if (dist_.rows() == 0 || dist_.cols() == 0) {
    throw std::invalid_argument("Policy: empty state or action set");
  }
  normalize_rows(dist_, "Policy");
}

Policy Policy::uniform(int num_states, int num_actions) {
  return Policy(MatrixXd::Constant(num_states, num_actions, 1.0 / num_actions));
}

Policy Policy::deterministic(int num_actions, std::span<const int> actions) {
  MatrixXd dist = MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()), num_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] < 0 || actions[s] >= num_actions) {
      throw std::invalid_argument("deterministic policy: action out of range");
    }
    dist(static_cast<Eigen::Index>(s), actions[s]) = 1.0;
  }
  return Policy(std::move(dist));
}

bool Policy::is_deterministic() const {
  for (Eigen::Index s = 0; s < dist_.rows(); ++s) {
    if (dist_.row(s).maxCoeff() != 1.0) return false;
  }
  return true;
}

int Policy::mode(int s) const {
  Eigen::Index best = 0;
  dist_.row(s).maxCoeff(&best);  // first maximal index
  return static_cast<int>(best);
}

TabularMdp::TabularMdp(MatrixXd cost, double discount, VectorXd initial_dist,
                       TransitionModel dynamics)
    : cost_(std::move(cost)),
      discount_(discount),
      initial_dist_(std::move(initial_dist)),
      dynamics_(std::move(dynamics)) {
  if (cost_.rows() != dynamics_.num_states() ||
      cost_.cols() != dynamics_.num_actions()) {
    throw std::invalid_argument("TabularMdp: cost table must be S x A");
  }
  if (!cost_.allFinite() || cost_.minCoeff() < 0.0 || cost_.maxCoeff() > 1.0) {
    throw std::invalid_argument("TabularMdp: costs must lie in [0, 1]");
  }
  if (!(discount_ >= 0.0 && discount_ < 1.0)) {
    throw std::invalid_argument("TabularMdp: discount must lie in [0, 1)");
  }
  if (initial_dist_.size() != dynamics_.num_states()) {
    throw std::invalid_argument("TabularMdp: initial distribution has wrong size");
  }
  MatrixXd row = initial_dist_.transpose();
  normalize_rows(row, "TabularMdp initial distribution");
  initial_dist_ = row.transpose();
}

ExplorationDistribution::ExplorationDistribution(MatrixXd weights)
    : weights_(std::move(weights)) {
  if (weights_.size() == 0 || !weights_.allFinite() || weights_.minCoeff() < 0.0) {
    throw std::invalid_argument("ExplorationDistribution: weights must be nonnegative");
  }
  const double sum = weights_.sum();
  if (std::abs(sum - 1.0) > kProbTolerance) {
    throw std::invalid_argument("ExplorationDistribution: weights sum to " +
                                std::to_string(sum));
  }
  if (needs_rescale(sum, weights_.size())) weights_ /= sum;
}

ExplorationDistribution ExplorationDistribution::uniform(int num_states,
                                                         int num_actions) {
  return ExplorationDistribution(MatrixXd::Constant(
      num_states, num_actions, 1.0 / (num_states * num_actions)));
}

ValueTable evaluate_policy(const TabularMdp& mdp, const TransitionModel& model,
                           const Policy& policy) {
  check_dims(mdp, model, policy);
  const int S = mdp.num_states();
  const MatrixXd p = policy_kernel(model, policy);
  const VectorXd c_pi =
      mdp.cost().cwiseProduct(policy.action_dist()).rowwise().sum();
  const MatrixXd system = MatrixXd::Identity(S, S) - mdp.discount() * p;
  ValueTable out;
  out.v = system.partialPivLu().solve(c_pi);
  out.q = q_from_v(mdp, model, out.v);
  return out;
}

OccupancyMeasure occupancy(const TabularMdp& mdp, const TransitionModel& model,
                           const Policy& policy) {
  check_dims(mdp, model, policy);
  const int S = mdp.num_states();
  const double gamma = mdp.discount();
  const MatrixXd p = policy_kernel(model, policy);
  const MatrixXd system = MatrixXd::Identity(S, S) - gamma * p.transpose();
  OccupancyMeasure out;
  out.state_only = system.partialPivLu().solve((1.0 - gamma) * mdp.initial_dist());
  out.state_action = out.state_only.asDiagonal() * policy.action_dist();
  return out;
}

double performance(const TabularMdp& mdp, const TransitionModel& model,
                   const Policy& policy) {
  return mdp.initial_dist().dot(evaluate_policy(mdp, model, policy).v);
}

Policy greedy_policy(const MatrixXd& q) {
  std::vector<int> actions(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    Eigen::Index best = 0;
    q.row(s).minCoeff(&best);  // Eigen returns the first minimal index
    actions[static_cast<std::size_t>(s)] = static_cast<int>(best);
  }
  return Policy::deterministic(static_cast<int>(q.cols()), actions);
}

double bellman_optimality_residual(const ValueTable& values) {
  return (values.v - values.q.rowwise().minCoeff()).cwiseAbs().maxCoeff();
}

PlanResult plan_optimal(const TabularMdp& mdp, const TransitionModel& model,
                        double tol) {
  check_dims(mdp, model);
  if (!(tol > 0.0)) throw std::invalid_argument("plan_optimal: tol must be positive");
  const double gamma = mdp.discount();
  // Stopping on ||v_{k+1} - v_k|| <= tol (1 - gamma) / (2 gamma) leaves the
  // greedy policy tol-optimal.
  const double stop = gamma > 0.0 ? tol * (1.0 - gamma) / (2.0 * gamma) : tol;
  VectorXd v = VectorXd::Zero(mdp.num_states());
  int sweeps = 0;
  constexpr int kMaxValueSweeps = 1'000'000;
  for (; sweeps < kMaxValueSweeps; ++sweeps) {
    VectorXd next = q_from_v(mdp, model, v).rowwise().minCoeff();
    const double delta = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (delta <= stop) {
      ++sweeps;
      break;
    }
  }

  Policy policy = greedy_policy(q_from_v(mdp, model, v));
  ValueTable values = evaluate_policy(mdp, model, policy);
  ++sweeps;
  constexpr int kMaxPolish = 100;
  for (int i = 0; i < kMaxPolish; ++i) {
    Policy next = greedy_policy(values.q);
    // Keep the incumbent where it is already optimal up to round-off.
    bool changed = false;
    std::vector<int> actions(static_cast<std::size_t>(mdp.num_states()));
    for (int s = 0; s < mdp.num_states(); ++s) {
      const int current = policy.mode(s);
      const int candidate = next.mode(s);
      const double scale = 1.0 + std::abs(values.v(s));
      if (values.q(s, candidate) < values.q(s, current) - 1e-13 * scale) {
        actions[static_cast<std::size_t>(s)] = candidate;
        changed = true;
      } else {
        actions[static_cast<std::size_t>(s)] = current;
      }
    }
    if (!changed) break;
    policy = Policy::deterministic(mdp.num_actions(), actions);
    values = evaluate_policy(mdp, model, policy);
    ++sweeps;
  }
  return {std::move(policy), std::move(values), sweeps};
}

Policy optimal_policy(const TabularMdp& mdp, const TransitionModel& model,
                      double tol) {
  return plan_optimal(mdp, model, tol).policy;
}

void TransitionDataset::append_partition(std::span<const Transition> tuples) {
  tuples_.insert(tuples_.end(), tuples.begin(), tuples.end());
  partition_ends_.push_back(tuples_.size());
}

void TransitionDataset::append(const TransitionDataset& other) {
  for (std::size_t i = 0; i < other.num_partitions(); ++i) {
    append_partition(other.partition(i));
  }
}

std::span<const Transition> TransitionDataset::partition(std::size_t index) const {
  if (index >= partition_ends_.size()) {
    throw std::out_of_range("TransitionDataset: partition index out of range");
  }
  const std::size_t begin = index == 0 ? 0 : partition_ends_[index - 1];
  return std::span<const Transition>(tuples_).subspan(begin, partition_ends_[index] - begin);
}

TransitionDataset sample_transitions(const TabularMdp& mdp,
                                     const Policy& policy,
                                     const ExplorationDistribution& nu,
                                     std::size_t n, std::uint64_t rng_seed) {
  if (n == 0) throw std::invalid_argument("sample_transitions: n must be positive");
  check_dims(mdp, mdp.dynamics(), policy);
  if (nu.weights().rows() != mdp.num_states() ||
      nu.weights().cols() != mdp.num_actions()) {
    throw std::invalid_argument("sample_transitions: exploration distribution has wrong shape");
  }
  const int A = mdp.num_actions();
  const double stop_prob = 1.0 - mdp.discount();
  const TransitionModel& dyn = mdp.dynamics();
  // Row-major copy so that (s, a) flat index s * A + a matches the kernel rows.
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> nu_flat =
      nu.weights();
  const std::span<const double> nu_span(nu_flat.data(), static_cast<std::size_t>(nu_flat.size()));

  auto draw_row = [](const auto& row, Rng& rng) {
    const Eigen::RowVectorXd copy = row;
    return static_cast<int>(
        sample_index(std::span<const double>(copy.data(), static_cast<std::size_t>(copy.size())), rng));
  };

  Rng rng(rng_seed);
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    int s = 0;
    int a = 0;
    Source source = Source::learned;
    if (uniform01(rng) < 0.5) {
      s = static_cast<int>(sample_index(
          std::span<const double>(mdp.initial_dist().data(),
                                  static_cast<std::size_t>(mdp.num_states())),
          rng));
      for (;;) {
        a = draw_row(policy.action_dist().row(s), rng);
        if (uniform01(rng) < stop_prob) break;
        s = draw_row(dyn.row(s, a), rng);
      }
    } else {
      const auto flat = static_cast<int>(sample_index(nu_span, rng));
      s = flat / A;
      a = flat % A;
      source = Source::exploration;
    }
    const int next = draw_row(dyn.row(s, a), rng);
    out.push_back({s, a, next, source});
  }
  TransitionDataset data;
  data.append_partition(out);
  return data;
}

TransitionModel random_model(int num_states, int num_actions, Rng& rng) {
  return {num_states, num_actions,
          dirichlet_rows(num_states * num_actions, num_states, rng)};
}

Policy random_policy(int num_states, int num_actions, Rng& rng) {
  return Policy(dirichlet_rows(num_states, num_actions, rng));
}

TabularMdp random_mdp(int num_states, int num_actions, double discount, Rng& rng) {
  MatrixXd cost(num_states, num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) cost(s, a) = uniform01(rng);
  }
  const VectorXd omega = dirichlet_rows(1, num_states, rng).transpose();
  TransitionModel dynamics = random_model(num_states, num_actions, rng);
  return {std::move(cost), discount, omega, std::move(dynamics)};
}

ExplorationDistribution random_exploration(int num_states, int num_actions, Rng& rng) {
  const MatrixXd flat = dirichlet_rows(1, num_states * num_actions, rng);
  MatrixXd weights(num_states, num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) weights(s, a) = flat(0, s * num_actions + a);
  }
  return ExplorationDistribution(std::move(weights));
}

}  // namespace lamps
