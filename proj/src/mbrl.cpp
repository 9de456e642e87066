#include "lamps/mbrl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lamps {
namespace {

// Sub-stream identifiers for derive_seed.
constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kHedgeStream = 2;

void require_data(std::span<const Transition> data, const char* what) {
  if (data.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
}

double successor_residual(const TransitionModel& model, const Transition& t,
                          const VectorXd& values) {
  return values(t.next_state) - model.row(t.state, t.action).dot(values);
}

// Flat layout of a kernel: row-major (S*A) x S.
VectorXd flatten(const TransitionModel& model) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
      model.kernel();
  return Eigen::Map<const VectorXd>(rm.data(), rm.size());
}

TransitionModel unflatten(const VectorXd& flat, int S, int A) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          flat.data(), static_cast<Eigen::Index>(S) * A, S);
  // Projection leaves rounding-level error; clean it up so validation passes.
  for (Eigen::Index r = 0; r < rm.rows(); ++r) {
    rm.row(r) = rm.row(r).cwiseMax(0.0);
    rm.row(r) /= rm.row(r).sum();
  }
  return {S, A, MatrixXd(rm)};
}

// Gradient of one partition's value-moment loss with respect to the flat
// kernel; the frozen values are constants.
double moment_loss_and_grad(const VectorXd& flat, int S, int A,
                            std::span<const Transition> data, const VectorXd& values,
                            FitVariant variant, VectorXd& grad) {
  std::size_t n_learned = 0;
  for (const auto& t : data) n_learned += t.source == Source::learned ? 1 : 0;
  const std::size_t n_exp = data.size() - n_learned;
  double loss = 0.0;
  for (const auto& t : data) {
    const Eigen::Index offset = (static_cast<Eigen::Index>(t.state) * A + t.action) * S;
    const double predicted = flat.segment(offset, S).dot(values);
    const double r = values(t.next_state) - predicted;
    double coef = 0.0;  // d loss / d predicted
    if (variant == FitVariant::moment_match_abs) {
      const double inv_n = 1.0 / static_cast<double>(data.size());
      loss += std::abs(r) * inv_n;
      coef = r > 0.0 ? -inv_n : (r < 0.0 ? inv_n : 0.0);
    } else if (t.source == Source::learned) {
      const double inv_n = 1.0 / static_cast<double>(n_learned);
      loss += r * inv_n;
      coef = -inv_n;
    } else {
      const double inv_n = 1.0 / static_cast<double>(n_exp);
      loss -= r * inv_n;
      coef = inv_n;
    }
    grad.segment(offset, S) += coef * values;
  }
  return loss;
}

struct ComputedPolicy {
  Policy policy;
  int sweeps = 0;
  bool converged = true;
};

ComputedPolicy compute_policy(const TabularMdp& mdp, const TransitionModel& model,
                              const ExplorationDistribution& nu, const MbrlConfig& config,
                              const Policy& previous) {
  if (config.policy_variant == PolicyVariant::lazy_disadvantage) {
    LazyPolicyResult r =
        compute_policy_lazy(mdp, model, nu, config.eps_po, config.max_sweeps, previous);
    return {std::move(r.policy), r.sweeps, r.converged};
  }
  PlanResult r = compute_policy_planning(mdp, model, config.eps_oc);
  return {std::move(r.policy), r.sweeps, true};
}

void validate(const MbrlConfig& config) {
  if (config.iterations < 1) throw std::invalid_argument("MbrlConfig: iterations must be >= 1");
  if (config.samples_per_iter < 1) {
    throw std::invalid_argument("MbrlConfig: samples_per_iter must be >= 1");
  }
  if (!(config.eps_po > 0.0) || !(config.eps_oc > 0.0)) {
    throw std::invalid_argument("MbrlConfig: tolerances must be positive");
  }
  if (config.max_sweeps < 0) throw std::invalid_argument("MbrlConfig: max_sweeps must be >= 0");
  if (config.hedge_loss_scale < 0.0) {
    throw std::invalid_argument("MbrlConfig: hedge_loss_scale must be >= 0");
  }
}

}  // namespace

ModelClass::ModelClass(std::vector<TransitionModel> candidates, int num_states,
                       int num_actions)
    : candidates_(std::move(candidates)), num_states_(num_states), num_actions_(num_actions) {}

ModelClass ModelClass::finite(std::vector<TransitionModel> candidates) {
  if (candidates.empty()) throw std::invalid_argument("ModelClass: empty candidate list");
  const int S = candidates.front().num_states();
  const int A = candidates.front().num_actions();
  for (const auto& m : candidates) {
    if (m.num_states() != S || m.num_actions() != A) {
      throw std::invalid_argument("ModelClass: candidates disagree on dimensions");
    }
  }
  return {std::move(candidates), S, A};
}

ModelClass ModelClass::tabular(int num_states, int num_actions) {
  if (num_states < 1 || num_actions < 1) {
    throw std::invalid_argument("ModelClass: dimensions must be positive");
  }
  return {{}, num_states, num_actions};
}

double mle_loss(const TransitionModel& model, std::span<const Transition> data) {
  require_data(data, "mle_loss");
  double total = 0.0;
  for (const auto& t : data) {
    total -= std::log(std::max(model.prob(t.state, t.action, t.next_state), kLogProbFloor));
  }
  return total / static_cast<double>(data.size());
}

double moment_match_loss(const TransitionModel& model, std::span<const Transition> data,
                         const VectorXd& frozen_values, FitVariant variant) {
  require_data(data, "moment_match_loss");
  if (frozen_values.size() != model.num_states()) {
    throw std::invalid_argument("moment_match_loss: value vector has wrong length");
  }
  if (variant == FitVariant::moment_match_abs) {
    double total = 0.0;
    for (const auto& t : data) total += std::abs(successor_residual(model, t, frozen_values));
    return total / static_cast<double>(data.size());
  }
  if (variant != FitVariant::moment_match_signed) {
    throw std::invalid_argument("moment_match_loss: not a moment-matching variant");
  }
  double learned = 0.0;
  double exploration = 0.0;
  std::size_t n_learned = 0;
  std::size_t n_exp = 0;
  for (const auto& t : data) {
    const double r = successor_residual(model, t, frozen_values);
    if (t.source == Source::learned) {
      learned += r;
      ++n_learned;
    } else {
      exploration -= r;
      ++n_exp;
    }
  }
  double loss = 0.0;
  if (n_learned > 0) loss += learned / static_cast<double>(n_learned);
  if (n_exp > 0) loss += exploration / static_cast<double>(n_exp);
  return loss;
}

double round_loss(const TransitionModel& model, std::span<const Transition> data,
                  const VectorXd& frozen_values, FitVariant variant) {
  if (variant == FitVariant::mle) return mle_loss(model, data);
  return moment_match_loss(model, data, frozen_values, variant);
}

TransitionModel fit_model_mle(const TransitionDataset& data, const ModelClass& model_class,
                              double laplace_alpha) {
  require_data(data.all(), "fit_model_mle");
  if (model_class.is_finite()) {
    const auto& candidates = model_class.candidates();
    const std::size_t idx = ftl_argmin(
        std::span<const TransitionModel>(candidates), data.num_partitions(),
        [&](const TransitionModel& m, std::size_t round) {
          return mle_loss(m, data.partition(round));
        });
    return candidates[idx];
  }
  if (!(laplace_alpha > 0.0)) throw std::invalid_argument("fit_model_mle: alpha must be positive");
  const int S = model_class.num_states();
  const int A = model_class.num_actions();
  MatrixXd counts = MatrixXd::Constant(static_cast<Eigen::Index>(S) * A, S, laplace_alpha);
  for (const auto& t : data.all()) {
    if (t.state < 0 || t.state >= S || t.action < 0 || t.action >= A || t.next_state < 0 ||
        t.next_state >= S) {
      throw std::out_of_range("fit_model_mle: tuple outside the model's state/action range");
    }
    counts(static_cast<Eigen::Index>(t.state) * A + t.action, t.next_state) += 1.0;
  }
  for (Eigen::Index r = 0; r < counts.rows(); ++r) counts.row(r) /= counts.row(r).sum();
  return {S, A, std::move(counts)};
}

void project_rows_to_simplex(VectorXd& flat, int width) {
  if (width < 1 || flat.size() % width != 0) {
    throw std::invalid_argument("project_rows_to_simplex: length not a multiple of width");
  }
  std::vector<double> sorted(static_cast<std::size_t>(width));
  for (Eigen::Index start = 0; start < flat.size(); start += width) {
    auto block = flat.segment(start, width);
    std::copy(block.begin(), block.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumsum = 0.0;
    double shift = 0.0;
    for (int k = 0; k < width; ++k) {
      cumsum += sorted[static_cast<std::size_t>(k)];
      const double candidate = (cumsum - 1.0) / (k + 1);
      if (sorted[static_cast<std::size_t>(k)] - candidate > 0.0) shift = candidate;
    }
    block = (block.array() - shift).cwiseMax(0.0);
  }
}

MomentMatchFit fit_model_moment_match(const TransitionDataset& data,
                                      const ModelClass& model_class,
                                      std::span<const VectorXd> frozen_values,
                                      const MomentMatchOptions& options) {
  require_data(data.all(), "fit_model_moment_match");
  if (options.variant == FitVariant::mle) {
    throw std::invalid_argument("fit_model_moment_match: variant must be moment matching");
  }
  if (frozen_values.size() != data.num_partitions()) {
    throw std::invalid_argument("fit_model_moment_match: one value vector per partition required");
  }
  const std::size_t rounds = data.num_partitions();

  if (model_class.is_finite()) {
    const auto& candidates = model_class.candidates();
    std::vector<double> totals(candidates.size(), 0.0);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      for (std::size_t r = 0; r < rounds; ++r) {
        totals[i] += moment_match_loss(candidates[i], data.partition(r), frozen_values[r],
                                       options.variant);
      }
    }
    const std::size_t idx = ftl_argmin(std::span<const double>(totals));
    return {candidates[idx], idx, totals[idx]};
  }

  const int S = model_class.num_states();
  const int A = model_class.num_actions();
  const VectorXd start = flatten(options.warm_start ? *options.warm_start
                                                    : TransitionModel::uniform(S, A));
  CumulativeLoss loss = [&](const VectorXd& theta, VectorXd& grad) {
    double total = 0.0;
    for (std::size_t r = 0; r < rounds; ++r) {
      total += moment_loss_and_grad(theta, S, A, data.partition(r), frozen_values[r],
                                    options.variant, grad);
    }
    return total;
  };
  FtrlOptions ftrl = options.ftrl;
  ftrl.projection = [S](VectorXd& theta) { project_rows_to_simplex(theta, S); };
  const FtrlResult result = ftrl_step(start, loss, options.reg_strength, ftrl);
  TransitionModel model = unflatten(result.params, S, A);
  double cumulative = 0.0;
  for (std::size_t r = 0; r < rounds; ++r) {
    cumulative += moment_match_loss(model, data.partition(r), frozen_values[r], options.variant);
  }
  return {std::move(model), std::nullopt, cumulative};
}

LazyPolicyResult compute_policy_lazy(const TabularMdp& mdp, const TransitionModel& model_hat,
                                     const ExplorationDistribution& nu, double eps_po,
                                     int max_sweeps, const Policy& initial) {
  if (!(eps_po > 0.0)) throw std::invalid_argument("compute_policy_lazy: eps_po must be positive");
  const VectorXd marginal = nu.state_marginal();
  if (marginal.size() != mdp.num_states()) {
    throw std::invalid_argument("compute_policy_lazy: exploration distribution has wrong shape");
  }
  MatrixXd dist = initial.action_dist();
  int sweeps = 0;
  for (;;) {
    const Policy policy(dist);
    const ValueTable values = evaluate_policy(mdp, model_hat, policy);
    const double dis = nu_disadvantage(values, nu);
    if (dis <= eps_po) return {policy, dis, sweeps, true};
    if (sweeps >= max_sweeps) return {policy, dis, sweeps, false};
    for (int s = 0; s < mdp.num_states(); ++s) {
      if (marginal(s) <= 0.0) continue;
      Eigen::Index best = 0;
      const double min_q = values.q.row(s).minCoeff(&best);
      // Switch only on a strict improvement so the sweep cannot cycle.
      if (values.v(s) - min_q > 1e-14 * (1.0 + std::abs(values.v(s)))) {
        dist.row(s).setZero();
        dist(s, best) = 1.0;
      }
    }
    ++sweeps;
  }
}

PlanResult compute_policy_planning(const TabularMdp& mdp, const TransitionModel& model_hat,
                                   double eps_oc) {
  if (!(eps_oc > 0.0)) throw std::invalid_argument("compute_policy_planning: eps_oc must be positive");
  return plan_optimal(mdp, model_hat, eps_oc);
}

double MetaLoopResult::average_regret() const {
  if (metrics.empty()) return 0.0;
  double total = 0.0;
  for (const auto& m : metrics) total += m.real_performance - expert_performance;
  return total / static_cast<double>(metrics.size());
}

MetaLoopResult run_meta_loop(const TabularMdp& mdp, const ModelClass& model_class,
                             const ExplorationDistribution& nu, const MbrlConfig& config) {
  validate(config);
  if (model_class.num_states() != mdp.num_states() ||
      model_class.num_actions() != mdp.num_actions()) {
    throw std::invalid_argument("run_meta_loop: model class does not match the MDP");
  }
  const TransitionModel& truth = mdp.dynamics();
  const Policy expert = plan_optimal(mdp, truth).policy;
  const bool finite = model_class.is_finite();
  const std::size_t num_candidates = finite ? model_class.candidates().size() : 0;
  const bool signed_loss = config.fit_variant == FitVariant::moment_match_signed;

  MetaLoopResult out;
  out.expert_performance = performance(mdp, truth, expert);
  out.raw_losses = LossLedger(num_candidates);

  HedgeState hedge;
  LossNormalizer normalizer(signed_loss);
  std::size_t current_index = 0;
  TransitionModel model = TransitionModel::uniform(mdp.num_states(), mdp.num_actions());
  if (finite) {
    if (config.finite_learner == FiniteLearner::hedge) {
      hedge = HedgeState::uniform(num_candidates, config.hedge_beta);
      out.hedge_weights.push_back(hedge.weights);
      Rng rng(derive_seed(config.rng_seed, kHedgeStream, 0));
      current_index = sample_index(
          std::span<const double>(hedge.weights.data(), num_candidates), rng);
    }
    model = model_class.candidates()[current_index];
  }

  ComputedPolicy computed =
      compute_policy(mdp, model, nu, config,
                     Policy::uniform(mdp.num_states(), mdp.num_actions()));
  std::vector<VectorXd> frozen;

  for (int t = 1; t <= config.iterations; ++t) {
    const Policy& policy = computed.policy;
    out.models.push_back(model);
    out.policies.push_back(policy);
    out.policy_converged.push_back(computed.converged);
    if (finite) out.selected.push_back(current_index);

    const ValueTable in_model = evaluate_policy(mdp, model, policy);
    const double dis = nu_disadvantage(in_model, nu);
    if (config.policy_variant == PolicyVariant::lazy_disadvantage) {
      out.bounds.push_back(corollary_pdam_bound(mdp, model, policy, expert, nu, dis));
    } else {
      out.bounds.push_back(corollary_tv_bound(mdp, model, policy, expert,
                                              optimality_gap(mdp, model, policy)));
    }

    const TransitionDataset batch =
        sample_transitions(mdp, policy, nu, config.samples_per_iter,
                           derive_seed(config.rng_seed, kDataStream, static_cast<std::uint64_t>(t)));
    out.data.append(batch);
    frozen.push_back(in_model.v);
    const std::span<const Transition> tuples = batch.all();

    IterationMetrics m;
    m.iteration = t;
    m.real_performance = performance(mdp, truth, policy);
    m.model_loss = round_loss(model, tuples, in_model.v, config.fit_variant);
    m.disadvantage = dis;
    m.planner_calls = computed.sweeps;
    m.v_hat_max = in_model.v.cwiseAbs().maxCoeff();
    m.v_max = evaluate_policy(mdp, model, expert).v.cwiseAbs().maxCoeff();
    out.metrics.push_back(m);

    if (finite) {
      const auto& candidates = model_class.candidates();
      std::vector<double> losses(num_candidates);
      for (std::size_t i = 0; i < num_candidates; ++i) {
        losses[i] = round_loss(candidates[i], tuples, in_model.v, config.fit_variant);
      }
      out.raw_losses.record(losses);
      if (config.finite_learner == FiniteLearner::ftl) {
        current_index = ftl_argmin(out.raw_losses);
      } else {
        std::vector<double> scaled;
        if (config.hedge_loss_scale > 0.0) {
          scaled.resize(num_candidates);
          for (std::size_t i = 0; i < num_candidates; ++i) {
            const double r = losses[i] / config.hedge_loss_scale;
            scaled[i] = signed_loss ? 0.5 * (r + 1.0) : r;
          }
        } else {
          scaled = normalizer.normalize(losses);
        }
        hedge = hedge_update(hedge, scaled);
        out.hedge_weights.push_back(hedge.weights);
        out.normalized_losses.push_back(std::move(scaled));
        Rng rng(derive_seed(config.rng_seed, kHedgeStream, static_cast<std::uint64_t>(t)));
        current_index = sample_index(
            std::span<const double>(hedge.weights.data(), num_candidates), rng);
      }
      model = candidates[current_index];
    } else if (config.fit_variant == FitVariant::mle) {
      model = fit_model_mle(out.data, model_class, config.laplace_alpha);
    } else {
      MomentMatchOptions options;
      options.variant = config.fit_variant;
      options.reg_strength = config.mm_reg_strength;
      options.ftrl = config.mm_ftrl;
      options.warm_start = model;
      model = fit_model_moment_match(out.data, model_class, frozen, options).model;
    }
    computed = compute_policy(mdp, model, nu, config, computed.policy);
  }
  out.models.push_back(model);
  out.policies.push_back(computed.policy);
  return out;
}

Table metrics_table(std::span<const IterationMetrics> metrics) {
  Table table;
  table.columns.assign(std::begin(kMetricsColumns), std::end(kMetricsColumns));
  for (const auto& m : metrics) {
    table.add_row({static_cast<double>(m.iteration), m.real_performance, m.model_loss,
                   m.disadvantage, static_cast<double>(m.planner_calls), m.v_hat_max,
                   m.v_max});
  }
  return table;
}

std::string metrics_csv(std::span<const IterationMetrics> metrics) {
  return metrics_table(metrics).to_csv();
}

std::string metrics_jsonl(std::span<const IterationMetrics> metrics) {
  const Table table = metrics_table(metrics);
  std::ostringstream out;
  for (const auto& row : table.rows) {
    out << '{';
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << ',';
      out << '"' << table.columns[c] << "\":" << format_double(row[c]);
    }
    out << "}\n";
  }
  return out.str();
}

}  // namespace lamps
