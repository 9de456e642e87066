#include "lamps/widetree.hpp"

#include <stdexcept>

namespace lamps {
namespace {

using namespace widetree_states;

constexpr int kActions = 2;
constexpr std::uint64_t kMleStream = 11;
constexpr std::uint64_t kMmStream = 12;

void fill_uniform_quarter(MatrixXd& kernel, int row, int quarter, int quarter_size) {
  for (int k = 0; k < quarter_size; ++k) {
    kernel(row, kFirstLeaf + quarter * quarter_size + k) = 1.0 / quarter_size;
  }
}

// Leaf quarters reached from the trap and safe children. The true model uses
// quarters 0 and 1; the corrupted model uses 2 and 3.
MatrixXd tree_kernel(int n_leaves, bool root_swapped, int trap_quarter, int safe_quarter) {
  const int S = kFirstLeaf + n_leaves;
  const int quarter = n_leaves / 4;
  MatrixXd k = MatrixXd::Zero(static_cast<Eigen::Index>(S) * kActions, S);
  auto row = [](int s, int a) { return s * kActions + a; };
  const int trap_action = root_swapped ? 1 - kWideTreeTrapAction : kWideTreeTrapAction;
  k(row(kRoot, trap_action), kTrap) = 1.0;
  k(row(kRoot, 1 - trap_action), kSafe) = 1.0;
  for (int a = 0; a < kActions; ++a) {
    k(row(kTrap, a), kTrapChild) = 1.0;
    k(row(kSafe, a), kSafeChild) = 1.0;
    fill_uniform_quarter(k, row(kTrapChild, a), trap_quarter, quarter);
    fill_uniform_quarter(k, row(kSafeChild, a), safe_quarter, quarter);
  }
  for (int leaf = kFirstLeaf; leaf < S; ++leaf) {
    for (int a = 0; a < kActions; ++a) k(row(leaf, a), leaf) = 1.0;
  }
  return k;
}

std::vector<double> good_probability(const MetaLoopResult& run) {
  std::vector<double> p;
  p.reserve(run.hedge_weights.size());
  for (const auto& w : run.hedge_weights) p.push_back(w(0));
  return p;
}

}  // namespace

ModelClass WideTree::model_class() const { return ModelClass::finite({good, bad}); }

WideTree build_widetree(const WideTreeSpec& spec) {
  if (spec.n_leaves < 4 || spec.n_leaves % 4 != 0) {
    throw std::invalid_argument("WideTreeSpec: n_leaves must be a positive multiple of 4");
  }
  if (!(spec.epsilon_cost > 0.0 && spec.epsilon_cost < 1.0)) {
    throw std::invalid_argument("WideTreeSpec: epsilon_cost must lie in (0, 1)");
  }
  const int S = kFirstLeaf + spec.n_leaves;
  MatrixXd cost = MatrixXd::Constant(S, kActions, spec.epsilon_cost);
  cost.row(kTrap).setOnes();
  VectorXd omega = VectorXd::Zero(S);
  omega(kRoot) = 1.0;

  TransitionModel truth(S, kActions, tree_kernel(spec.n_leaves, false, 0, 1));
  TransitionModel good(S, kActions, tree_kernel(spec.n_leaves, false, 2, 3));
  TransitionModel bad(S, kActions, tree_kernel(spec.n_leaves, true, 0, 1));

  MatrixXd nu = MatrixXd::Zero(S, kActions);
  nu.topRows(kFirstLeaf).setConstant(1.0 / (kFirstLeaf * kActions));

  return {spec,
          TabularMdp(std::move(cost), spec.discount, std::move(omega), std::move(truth)),
          std::move(good),
          std::move(bad),
          ExplorationDistribution(std::move(nu))};
}

Table WideTreeTrace::table() const {
  Table t;
  t.columns = {"iteration", "p_good_mle", "p_good_mm"};
  for (std::size_t i = 0; i < p_good_mle.size(); ++i) {
    t.add_row({static_cast<double>(i), p_good_mle[i], p_good_mm[i]});
  }
  return t;
}

WideTreeTrace run_widetree_experiment(const WideTreeSpec& spec, const WideTreeConfig& config) {
  if (config.iterations < 1) throw std::invalid_argument("WideTreeConfig: iterations must be >= 1");
  const WideTree tree = build_widetree(spec);
  const ModelClass models = tree.model_class();

  MbrlConfig base;
  base.iterations = config.iterations;
  base.samples_per_iter = config.samples_per_iter;
  base.policy_variant = PolicyVariant::full_planning;
  base.finite_learner = FiniteLearner::hedge;
  base.hedge_beta = config.hedge_beta;

  MbrlConfig mle = base;
  mle.fit_variant = FitVariant::mle;
  mle.rng_seed = derive_seed(config.rng_seed, kMleStream);
  MbrlConfig mm = base;
  mm.fit_variant = FitVariant::moment_match_abs;
  mm.rng_seed = derive_seed(config.rng_seed, kMmStream);

  WideTreeTrace trace;
  trace.p_good_mle = good_probability(run_meta_loop(tree.mdp, models, tree.nu, mle));
  trace.p_good_mm = good_probability(run_meta_loop(tree.mdp, models, tree.nu, mm));
  return trace;
}

}  // namespace lamps
