#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/reasoning/exact.hpp"
#include "knowgraph/reasoning/factor_graph.hpp"

namespace knowgraph::reasoning {

inline constexpr double kDefaultEta = 1.0;

inline double bernoulli_entropy(double q) {
  const double c = clamp_prob(q);
  return -c * std::log(c) - (1.0 - c) * std::log(1.0 - c);
}

inline double cross_entropy(double q, int y) {
  const double c = clamp_prob(q);
  return y == 1 ? -std::log(c) : -std::log(1.0 - c);
}

struct ElboTerms {
  double evidence = 0.0;    // sum_i b_i q_i
  double rules = 0.0;       // sum_f w_f E_q[f]
  double entropy = 0.0;     // sum_i H(q_i)
  double supervised = 0.0;  // sum over labeled variables of CE(q_i, y_i)
  double total = 0.0;       // evidence + rules + entropy - eta * supervised
};

// q holds one entry per variable; observed entries are ignored in favour of
// their values. log Z(w) is not included.
inline ElboTerms elbo_terms(const FactorGraph& fg, std::span<const double> w, std::span<const double> q, double eta = kDefaultEta) {
  check_weights(fg, w);
  if (q.size() != fg.vars.size()) throw ShapeError("elbo: q does not cover the factor graph");
  std::vector<double> qq(q.begin(), q.end());
  ElboTerms t;
  for (std::size_t i = 0; i < fg.vars.size(); ++i) {
    const auto& v = fg.vars[i];
    if (v.observed()) {
      qq[i] = v.value ? 1.0 : 0.0;
      continue;
    }
    t.evidence += v.b * qq[i];
    t.entropy += bernoulli_entropy(qq[i]);
    if (v.label >= 0) t.supervised += cross_entropy(qq[i], v.label);
  }
  for (const auto& f : fg.factors) t.rules += w[f.weight] * expected_truth(f.table, factor_q(f, qq)).value;
  t.total = t.evidence + t.rules + t.entropy - eta * t.supervised;
  if (!std::isfinite(t.total)) throw NumericError("elbo is not finite");
  return t;
}

inline double elbo(const FactorGraph& fg, std::span<const double> w, std::span<const double> q, double eta = kDefaultEta) {
  return elbo_terms(fg, w, q, eta).total;
}

// dELBO/dq_i; zero for observed variables.
inline std::vector<double> elbo_grad_q(const FactorGraph& fg, std::span<const double> w, std::span<const double> q,
                                       double eta = kDefaultEta) {
  check_weights(fg, w);
  std::vector<double> qq(q.begin(), q.end());
  for (std::size_t i = 0; i < fg.vars.size(); ++i)
    if (fg.vars[i].observed()) qq[i] = fg.vars[i].value ? 1.0 : 0.0;
  std::vector<double> g(fg.vars.size(), 0.0);
  for (const auto& f : fg.factors) {
    const Expectation e = expected_truth(f.table, factor_q(f, qq));
    for (std::size_t j = 0; j < f.vars.size(); ++j) g[f.vars[j]] += w[f.weight] * e.grad[j];
  }
  for (std::size_t i = 0; i < fg.vars.size(); ++i) {
    const auto& v = fg.vars[i];
    if (v.observed()) {
      g[i] = 0.0;
      continue;
    }
    const double c = clamp_prob(qq[i]);
    // Entropy and cross-entropy use the clamped value; outside the clamp their
    // derivatives vanish.
    const bool inside = qq[i] > kProbClamp && qq[i] < 1.0 - kProbClamp;
    g[i] += v.b;
    if (inside) {
      g[i] += std::log((1.0 - c) / c);
      if (v.label >= 0) g[i] -= eta * (v.label == 1 ? -1.0 / c : 1.0 / (1.0 - c));
    }
  }
  return g;
}

// Coordinate ascent on the unsupervised mean-field fixed point equations
// q_i = sigmoid(b_i + sum_f w_f dE_f/dq_i), started from `q` (the evidence by
// default). Reference point for the learned posterior.
inline std::vector<double> mean_field_fixed_point(const FactorGraph& fg, std::span<const double> w,
                                                  std::vector<double> q = {}, std::size_t sweeps = 500,
                                                  double tol = 1e-12) {
  check_weights(fg, w);
  if (q.empty()) q = evidence_q(fg);
  for (std::size_t s = 0; s < sweeps; ++s) {
    double change = 0.0;
    for (std::uint32_t i = 0; i < fg.vars.size(); ++i) {
      if (fg.vars[i].observed()) continue;
      double logit = fg.vars[i].b;
      for (std::uint32_t fi : fg.var_factors[i]) {
        const Factor& f = fg.factors[fi];
        const auto e = expected_truth(f.table, factor_q(f, q));
        const auto j = static_cast<std::size_t>(std::find(f.vars.begin(), f.vars.end(), i) - f.vars.begin());
        logit += w[f.weight] * e.grad[j];
      }
      const double next = sigmoid(logit);
      change = std::max(change, std::abs(next - q[i]));
      q[i] = next;
    }
    if (change < tol) break;
  }
  return q;
}

}  // namespace knowgraph::reasoning
