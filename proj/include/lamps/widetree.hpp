#pragma once

// Three-step tree MDP where one root action is critical, with a two-model
// class: one model right at the root and wrong below it, the other wrong only
// at the root.

#include <cstdint>
#include <vector>

#include "lamps/mbrl.hpp"
#include "lamps/table.hpp"
#include "lamps/tabular.hpp"

namespace lamps {

struct WideTreeSpec {
  int n_leaves = 16;            // multiple of 4, at least 4
  double epsilon_cost = 0.01;   // cost everywhere except the trap state
  double discount = 0.99;
};

/// State layout: root, trap, safe, trap_child, safe_child, then the leaves.
namespace widetree_states {
inline constexpr int kRoot = 0;
inline constexpr int kTrap = 1;
inline constexpr int kSafe = 2;
inline constexpr int kTrapChild = 3;
inline constexpr int kSafeChild = 4;
inline constexpr int kFirstLeaf = 5;
}  // namespace widetree_states

/// Root action that leads to the trap under the true dynamics.
inline constexpr int kWideTreeTrapAction = 0;

struct WideTree {
  WideTreeSpec spec;
  TabularMdp mdp;
  TransitionModel good;  // exact at the root, wrong leaf quarters below
  TransitionModel bad;   // exact except at the root, where actions are swapped
  ExplorationDistribution nu;  // uniform over the non-leaf (state, action) pairs

  /// {good, bad}; index 0 is the good model.
  ModelClass model_class() const;
};

WideTree build_widetree(const WideTreeSpec& spec = {});

struct WideTreeConfig {
  int iterations = 100;
  double hedge_beta = 0.9;
  std::size_t samples_per_iter = 100;
  std::uint64_t rng_seed = 0;
};

struct WideTreeTrace {
  /// Row t holds P(good) after t Hedge updates; row 0 is the uniform start.
  std::vector<double> p_good_mle;
  std::vector<double> p_good_mm;

  Table table() const;  // columns iteration, p_good_mle, p_good_mm
};

/// Hedge over {good, bad}: every round samples a model, plans in it, collects
/// data in the true MDP, and updates with running-max normalized losses. The
/// likelihood and moment-matching runs use independent random streams.
WideTreeTrace run_widetree_experiment(const WideTreeSpec& spec, const WideTreeConfig& config);

}  // namespace lamps
