#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/reasoning/factor_graph.hpp"

namespace knowgraph::reasoning {

using RuleWeights = std::vector<double>;  // indexed like FactorGraph::weight_names

inline constexpr std::size_t kExactLimit = 20;

inline void check_weights(const FactorGraph& fg, std::span<const double> w) {
  if (w.size() != fg.weight_names.size())
    throw ShapeError("rule weights: expected " + std::to_string(fg.weight_names.size()) + ", got " + std::to_string(w.size()));
}

inline bool factor_holds(const Factor& f, const std::vector<std::uint8_t>& world) {
  std::size_t mask = 0;
  for (std::size_t j = 0; j < f.vars.size(); ++j) mask |= static_cast<std::size_t>(world[f.vars[j]] != 0) << j;
  return f.table[mask] != 0;
}

// sum_f w_f f(x) + sum_i b_i x_i. Observed variables enter only through the
// formulas.
inline double world_logpotential(const std::vector<std::uint8_t>& world, const FactorGraph& fg, std::span<const double> w) {
  check_weights(fg, w);
  if (world.size() != fg.vars.size()) throw ShapeError("world does not cover the factor graph");
  double total = 0.0;
  for (const auto& f : fg.factors)
    if (factor_holds(f, world)) total += w[f.weight];
  for (std::size_t i = 0; i < fg.vars.size(); ++i)
    if (!fg.vars[i].observed() && world[i]) total += fg.vars[i].b;
  return total;
}

struct ExactResult {
  std::vector<double> marginals;  // P(x_i = 1); observed variables report their value
  double log_partition = 0.0;     // log Z over worlds consistent with the observations
};

// Brute force over the 2^U assignments of the unobserved variables.
inline ExactResult exact_marginals(const FactorGraph& fg, std::span<const double> w) {
  check_weights(fg, w);
  std::vector<std::uint32_t> free;
  std::vector<std::uint8_t> world(fg.vars.size(), 0);
  for (std::uint32_t i = 0; i < fg.vars.size(); ++i) {
    if (fg.vars[i].observed())
      world[i] = fg.vars[i].value ? 1 : 0;
    else
      free.push_back(i);
  }
  if (free.size() > kExactLimit) throw ConfigError("exact_marginals: oracle limit (" + std::to_string(free.size()) + " > 20 unobserved variables)");
  const std::size_t n_worlds = std::size_t{1} << free.size();
  std::vector<double> logp(n_worlds);
  double max_logp = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < n_worlds; ++m) {
    for (std::size_t j = 0; j < free.size(); ++j) world[free[j]] = static_cast<std::uint8_t>((m >> j) & 1U);
    logp[m] = world_logpotential(world, fg, w);
    max_logp = std::max(max_logp, logp[m]);
  }
  ExactResult r;
  r.marginals.assign(fg.vars.size(), 0.0);
  double z = 0.0;
  std::vector<double> on(free.size(), 0.0);
  for (std::size_t m = 0; m < n_worlds; ++m) {
    const double p = std::exp(logp[m] - max_logp);
    z += p;
    for (std::size_t j = 0; j < free.size(); ++j)
      if ((m >> j) & 1U) on[j] += p;
  }
  for (std::size_t j = 0; j < free.size(); ++j) r.marginals[free[j]] = on[j] / z;
  for (std::size_t i = 0; i < fg.vars.size(); ++i)
    if (fg.vars[i].observed()) r.marginals[i] = fg.vars[i].value ? 1.0 : 0.0;
  r.log_partition = max_logp + std::log(z);
  return r;
}

// Contribution of flipping variable i from 0 to 1, with everything else as in
// `world`: b_i + sum_{f containing i} w_f [f(x_i=1) - f(x_i=0)].
inline double blanket_logit(const FactorGraph& fg, std::span<const double> w, std::uint32_t i,
                            std::vector<std::uint8_t>& world) {
  double logit = fg.vars[i].b;
  const std::uint8_t saved = world[i];
  for (std::uint32_t fi : fg.var_factors[i]) {
    const Factor& f = fg.factors[fi];
    world[i] = 1;
    const bool on = factor_holds(f, world);
    world[i] = 0;
    const bool off = factor_holds(f, world);
    logit += w[f.weight] * (static_cast<double>(on) - static_cast<double>(off));
  }
  world[i] = saved;
  return logit;
}

inline double conditional_given_blanket(const FactorGraph& fg, std::span<const double> w, std::uint32_t i,
                                        std::vector<std::uint8_t> world) {
  check_weights(fg, w);
  return sigmoid(blanket_logit(fg, w, i, world));
}

}  // namespace knowgraph::reasoning
