#pragma once

// JSON documents for MDP instances and decomposition reports.

#include <nlohmann/json.hpp>

#include "lamps/decomposition.hpp"
#include "lamps/tabular.hpp"

namespace lamps {

using Json = nlohmann::ordered_json;

/// {num_states, num_actions, gamma, cost[s][a], kernel[s][a][s'], omega[s]}.
/// Finite doubles survive a round trip bit for bit.
Json mdp_to_json(const TabularMdp& mdp);
/// Throws std::invalid_argument naming the offending field.
TabularMdp mdp_from_json(const Json& doc);

/// {lhs, terms: {name: value, ...}, residual}.
Json report_to_json(const DecompositionReport& report);
/// {lhs, rhs, components: {name: value, ...}, satisfied}.
Json report_to_json(const BoundReport& report);

}  // namespace lamps
