#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/learning/gcn.hpp"
#include "knowgraph/numerics/tape.hpp"
#include "knowgraph/reasoning/elbo.hpp"
#include "knowgraph/reasoning/factor_graph.hpp"

namespace knowgraph::reasoning {

// Mean-field posterior Q_theta. A GCN runs two rounds over the bipartite
// variable/factor graph and proposes marginals q~ = sigmoid(b + a); the output
// is one mean-field update from that proposal,
//   q_i = sigmoid(b_i + sum_{f containing i} w_f dE_f/dq_i (q~)),
// so that with no rules (or all weights zero) q equals the evidence exactly.
//
// Node features: [b/4, is_variable, is_factor, is_observed, observed value,
// one-hot predicate, one-hot rule weight], followed for variables by the
// learned class embedding mu of their predicate.
struct PosteriorModel {
  std::vector<std::string> pred_names;
  std::vector<std::string> weight_names;
  std::size_t hidden = 16;
  std::size_t mu_dim = 8;
  std::size_t refine_iters = 1;
  ParamSet params;

  std::size_t base_features() const { return 5 + pred_names.size() + weight_names.size(); }
};

inline PosteriorModel init_posterior(const FactorGraph& fg, std::mt19937_64& rng, std::size_t hidden = 16,
                                     std::size_t mu_dim = 8) {
  PosteriorModel m;
  m.pred_names = fg.pred_names;
  m.weight_names = fg.weight_names;
  m.hidden = hidden;
  m.mu_dim = mu_dim;
  std::normal_distribution<double> mu_init(0.0, 0.01);
  Tensor mu(fg.pred_names.size(), mu_dim);
  for (auto& v : mu.values()) v = mu_init(rng);
  m.params["post.mu"] = std::move(mu);
  m.params["post.W1"] = learning::glorot(m.base_features() + mu_dim, hidden, rng);
  m.params["post.b1"] = Tensor(1, hidden);
  m.params["post.W2"] = learning::glorot(hidden, hidden, rng);
  m.params["post.b2"] = Tensor(1, hidden);
  // Zero head: the initial proposal is the evidence itself.
  m.params["post.Wo"] = Tensor(hidden, 1);
  m.params["post.bo"] = Tensor(1, 1);
  return m;
}

inline void check_schema(const PosteriorModel& m, const FactorGraph& fg) {
  if (m.pred_names != fg.pred_names || m.weight_names != fg.weight_names)
    throw ConfigError("reasoner schema mismatch: the factor graph uses different predicates or rule weights");
}

// Graph-dependent constants of the posterior forward pass.
struct PosteriorInput {
  SparseOperator adj;
  Tensor features;
  std::vector<std::uint32_t> mu_index;
  std::vector<double> mu_mask;
  std::vector<std::uint32_t> var_rows;
  Tensor b;  // V x 1
  std::vector<std::uint8_t> observed;
  std::vector<double> observed_value;
};

inline PosteriorInput posterior_input(const PosteriorModel& m, const FactorGraph& fg) {
  check_schema(m, fg);
  const std::size_t nv = fg.vars.size();
  const std::size_t n = nv + fg.factors.size();
  const std::size_t np = fg.pred_names.size();
  PosteriorInput in;
  in.features = Tensor(n, m.base_features());
  in.mu_index.assign(n, 0);
  in.mu_mask.assign(n, 0.0);
  in.b = Tensor(nv, 1);
  in.observed.assign(nv, 0);
  in.observed_value.assign(nv, 0.0);
  for (std::size_t i = 0; i < nv; ++i) {
    const auto& v = fg.vars[i];
    in.features(i, 0) = v.b / 4.0;
    in.features(i, 1) = 1.0;
    in.features(i, 3) = v.observed() ? 1.0 : 0.0;
    in.features(i, 4) = v.observed() && v.value ? 1.0 : 0.0;
    in.features(i, 5 + v.pred) = 1.0;
    in.mu_index[i] = v.pred;
    in.mu_mask[i] = 1.0;
    in.b[i] = v.b;
    in.observed[i] = v.observed() ? 1 : 0;
    in.observed_value[i] = v.value ? 1.0 : 0.0;
    in.var_rows.push_back(static_cast<std::uint32_t>(i));
  }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (std::size_t fi = 0; fi < fg.factors.size(); ++fi) {
    const auto row = static_cast<std::uint32_t>(nv + fi);
    in.features(row, 2) = 1.0;
    in.features(row, 5 + np + fg.factors[fi].weight) = 1.0;
    for (std::uint32_t v : fg.factors[fi].vars) edges.emplace_back(v, row);
  }
  in.adj = learning::normalized_adjacency(n, edges);
  return in;
}

namespace detail {

// Observed entries replaced by their values (gradient blocked there).
inline Var pin_observed(Tape& tape, Var q, const PosteriorInput& in) {
  Tensor out = tape.value(q);
  for (std::size_t i = 0; i < in.observed.size(); ++i)
    if (in.observed[i]) out[i] = in.observed_value[i];
  return tape.custom("pin_observed", {q}, std::move(out), [&in](const Tensor& g) {
    Tensor gq = g;
    for (std::size_t i = 0; i < in.observed.size(); ++i)
      if (in.observed[i]) gq[i] = 0.0;
    return std::vector<Tensor>{gq};
  });
}

// s_i = sum_{f containing i} w_f dE_f/dq_i at q; Jacobian from the Hessians.
inline Var rule_messages(Tape& tape, Var q, const FactorGraph& fg, std::span<const double> w) {
  const Tensor& qv = tape.value(q);
  const std::size_t nv = fg.vars.size();
  Tensor s(nv, 1);
  std::vector<Expectation> cache;
  cache.reserve(fg.factors.size());
  for (const auto& f : fg.factors) {
    cache.push_back(expected_truth(f.table, factor_q(f, qv.values()), true));
    const auto& e = cache.back();
    for (std::size_t j = 0; j < f.vars.size(); ++j) s[f.vars[j]] += w[f.weight] * e.grad[j];
  }
  std::vector<double> weights(w.begin(), w.end());
  return tape.custom("rule_messages", {q}, std::move(s),
                     [&fg, weights = std::move(weights), cache = std::move(cache), nv](const Tensor& g) {
                       Tensor gq(nv, 1);
                       for (std::size_t fi = 0; fi < fg.factors.size(); ++fi) {
                         const Factor& f = fg.factors[fi];
                         const auto& h = cache[fi].hess;
                         const std::size_t m = f.vars.size();
                         const double wf = weights[f.weight];
                         for (std::size_t a = 0; a < m; ++a)
                           for (std::size_t c = 0; c < m; ++c)
                             gq[f.vars[c]] += g[f.vars[a]] * wf * h[a * m + c];
                       }
                       return std::vector<Tensor>{gq};
                     });
}

}  // namespace detail

// Marginals q for every variable (observed ones pinned to their value).
// `in` and `fg` must outlive the tape.
inline Var posterior_forward(Tape& tape, const PosteriorModel& m, const ParamSet& params, const PosteriorInput& in,
                             const FactorGraph& fg, std::span<const double> w) {
  check_weights(fg, w);
  const Var mu = tape.param("post.mu", params.at("post.mu"));
  const Var w1 = tape.param("post.W1", params.at("post.W1"));
  const Var b1 = tape.param("post.b1", params.at("post.b1"));
  const Var w2 = tape.param("post.W2", params.at("post.W2"));
  const Var b2 = tape.param("post.b2", params.at("post.b2"));
  const Var wo = tape.param("post.Wo", params.at("post.Wo"));
  const Var bo = tape.param("post.bo", params.at("post.bo"));
  const Var emb = tape.scale_rows(tape.gather_rows(mu, in.mu_index), in.mu_mask);
  const Var x = tape.concat_cols(tape.constant(in.features), emb);
  const Var h1 = tape.tanh(tape.add(tape.matmul(tape.spmm(in.adj, x), w1), b1));
  const Var h2 = tape.tanh(tape.add(tape.matmul(tape.spmm(in.adj, h1), w2), b2));
  const Var a = tape.add(tape.matmul(tape.gather_rows(h2, in.var_rows), wo), bo);
  const Var b = tape.constant(in.b);
  Var q = detail::pin_observed(tape, tape.sigmoid(tape.add(b, a)), in);
  for (std::size_t it = 0; it < std::max<std::size_t>(1, m.refine_iters); ++it)
    q = detail::pin_observed(tape, tape.sigmoid(tape.add(b, detail::rule_messages(tape, q, fg, w))), in);
  return q;
}

// ELBO of q as a tape node. With `normalize` the value is divided by the number
// of unobserved variables.
inline Var elbo_node(Tape& tape, Var q, const FactorGraph& fg, std::span<const double> w, double eta, bool normalize) {
  const Tensor& qv = tape.value(q);
  const double scale = normalize ? 1.0 / static_cast<double>(std::max<std::size_t>(1, fg.unobserved_count())) : 1.0;
  const double value = elbo(fg, w, qv.values(), eta) * scale;
  Tensor grad(qv.rows(), 1, elbo_grad_q(fg, w, qv.values(), eta));
  for (auto& v : grad.values()) v *= scale;
  return tape.custom("elbo", {q}, Tensor::scalar(value), [grad = std::move(grad)](const Tensor& g) {
    Tensor out = grad;
    for (auto& v : out.values()) v *= g.item();
    return std::vector<Tensor>{out};
  });
}

inline std::vector<double> posterior_marginals(const PosteriorModel& m, const ParamSet& params, const FactorGraph& fg,
                                               std::span<const double> w) {
  const PosteriorInput in = posterior_input(m, fg);
  Tape tape;
  const Var q = posterior_forward(tape, m, params, in, fg, w);
  const auto& v = tape.value(q).values();
  return {v.begin(), v.end()};
}

}  // namespace knowgraph::reasoning
