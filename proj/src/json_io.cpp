#include "lamps/json_io.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lamps {
namespace {

const Json& field(const Json& doc, const char* name) {
  if (!doc.is_object() || !doc.contains(name)) {
    throw std::invalid_argument(std::string("mdp json: missing field '") + name + "'");
  }
  return doc.at(name);
}

double number_at(const Json& value, const std::string& path) {
  if (!value.is_number()) throw std::invalid_argument("mdp json: " + path + " is not a number");
  return value.get<double>();
}

const Json& array_of(const Json& value, std::size_t size, const std::string& path) {
  if (!value.is_array() || value.size() != size) {
    throw std::invalid_argument("mdp json: " + path + " must be an array of length " +
                                std::to_string(size));
  }
  return value;
}

int positive_int(const Json& doc, const char* name) {
  const Json& v = field(doc, name);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw std::invalid_argument(std::string("mdp json: ") + name + " must be a positive integer");
  }
  return v.get<int>();
}

}  // namespace

Json mdp_to_json(const TabularMdp& mdp) {
  const int S = mdp.num_states();
  const int A = mdp.num_actions();
  Json cost = Json::array();
  Json kernel = Json::array();
  for (int s = 0; s < S; ++s) {
    Json cost_row = Json::array();
    Json kernel_row = Json::array();
    for (int a = 0; a < A; ++a) {
      cost_row.push_back(mdp.cost()(s, a));
      Json next = Json::array();
      for (int sp = 0; sp < S; ++sp) next.push_back(mdp.dynamics().prob(s, a, sp));
      kernel_row.push_back(std::move(next));
    }
    cost.push_back(std::move(cost_row));
    kernel.push_back(std::move(kernel_row));
  }
  Json omega = Json::array();
  for (int s = 0; s < S; ++s) omega.push_back(mdp.initial_dist()(s));
  Json doc;
  doc["num_states"] = S;
  doc["num_actions"] = A;
  doc["gamma"] = mdp.discount();
  doc["cost"] = std::move(cost);
  doc["kernel"] = std::move(kernel);
  doc["omega"] = std::move(omega);
  return doc;
}

TabularMdp mdp_from_json(const Json& doc) {
  const int S = positive_int(doc, "num_states");
  const int A = positive_int(doc, "num_actions");
  const double gamma = number_at(field(doc, "gamma"), "gamma");
  const Json& cost_doc = array_of(field(doc, "cost"), static_cast<std::size_t>(S), "cost");
  const Json& kernel_doc = array_of(field(doc, "kernel"), static_cast<std::size_t>(S), "kernel");
  const Json& omega_doc = array_of(field(doc, "omega"), static_cast<std::size_t>(S), "omega");

  MatrixXd cost(S, A);
  MatrixXd kernel(static_cast<Eigen::Index>(S) * A, S);
  VectorXd omega(S);
  for (int s = 0; s < S; ++s) {
    const std::string cs = "cost[" + std::to_string(s) + "]";
    const std::string ks = "kernel[" + std::to_string(s) + "]";
    const Json& crow = array_of(cost_doc[static_cast<std::size_t>(s)], static_cast<std::size_t>(A), cs);
    const Json& krow = array_of(kernel_doc[static_cast<std::size_t>(s)], static_cast<std::size_t>(A), ks);
    for (int a = 0; a < A; ++a) {
      const auto as = static_cast<std::size_t>(a);
      cost(s, a) = number_at(crow[as], cs + "[" + std::to_string(a) + "]");
      const std::string kp = ks + "[" + std::to_string(a) + "]";
      const Json& next = array_of(krow[as], static_cast<std::size_t>(S), kp);
      for (int sp = 0; sp < S; ++sp) {
        kernel(static_cast<Eigen::Index>(s) * A + a, sp) =
            number_at(next[static_cast<std::size_t>(sp)], kp + "[" + std::to_string(sp) + "]");
      }
    }
    omega(s) = number_at(omega_doc[static_cast<std::size_t>(s)], "omega[" + std::to_string(s) + "]");
  }
  return {std::move(cost), gamma, std::move(omega), TransitionModel(S, A, std::move(kernel))};
}

Json report_to_json(const DecompositionReport& report) {
  Json terms = Json::object();
  for (const auto& t : report.terms) terms[t.name] = t.value;
  Json doc;
  doc["lhs"] = report.lhs;
  doc["terms"] = std::move(terms);
  doc["residual"] = report.residual;
  return doc;
}

Json report_to_json(const BoundReport& report) {
  Json components = Json::object();
  for (const auto& c : report.components) {
    // JSON has no infinity; an unbounded coverage coefficient is written as null.
    if (std::isfinite(c.value)) {
      components[c.name] = c.value;
    } else {
      components[c.name] = nullptr;
    }
  }
  Json doc;
  doc["lhs"] = report.lhs;
  if (std::isfinite(report.rhs)) {
    doc["rhs"] = report.rhs;
  } else {
    doc["rhs"] = nullptr;
  }
  doc["components"] = std::move(components);
  doc["satisfied"] = report.satisfied;
  return doc;
}

}  // namespace lamps
