#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/learning/ensemble.hpp"
#include "knowgraph/numerics/tape.hpp"
#include "knowgraph/reasoning/elbo.hpp"
#include "knowgraph/reasoning/exact.hpp"
#include "knowgraph/reasoning/factor_graph.hpp"
#include "knowgraph/reasoning/posterior.hpp"

namespace knowgraph::reasoning {

struct EStepConfig {
  std::size_t steps = 50;
  double lr = 0.05;
  double eta = kDefaultEta;
  std::size_t n_noise_passes = 10;
  double noise_sigma = 0.1;
  std::size_t max_halvings = 20;
};

enum class ExpectationMode : std::uint8_t { kAuto, kExact, kSampled };

struct MStepConfig {
  std::size_t steps = 25;
  double lr = 0.1;
  std::size_t samples = 16;  // antithetic pairs count as two
  ExpectationMode mode = ExpectationMode::kAuto;
  std::size_t exact_limit = 12;  // largest blanket enumerated in auto mode
  std::size_t max_halvings = 20;
};

struct EmConfig {
  std::size_t rounds = 20;
  EStepConfig e;
  MStepConfig m;
  std::uint64_t seed = 0;
};

// Objective before and after one accepted (or rejected) ascent step.
struct StepRecord {
  std::size_t round = 0;
  double before = 0.0;
  double after = 0.0;
  bool accepted = false;
};

struct EmLog {
  std::vector<double> elbo;  // per round, after the E-step, un-normalized, noise-free
  std::vector<double> pll;   // per round, after the M-step, per unobserved variable
  std::vector<StepRecord> e_steps;
  std::vector<StepRecord> m_steps;
  std::vector<std::vector<double>> weights;  // per round
};

namespace detail {

inline ParamSet axpy(const ParamSet& base, double a, const Gradients& g) {
  ParamSet out = base;
  for (auto& [name, t] : out) {
    const Tensor& d = g.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] += a * d[i];
  }
  return out;
}

// Normalized ELBO averaged over fixed noise draws, with its gradient at the
// unperturbed parameters' coordinates.
struct NoisyObjective {
  const PosteriorModel& model;
  const PosteriorInput& input;
  const FactorGraph& fg;
  std::span<const double> w;
  double eta;
  std::vector<ParamSet> noise;  // additive offsets; empty = no noise

  double value(const ParamSet& theta, Gradients* grad) const {
    const std::size_t passes = std::max<std::size_t>(1, noise.size());
    double total = 0.0;
    if (grad) grad->clear();
    for (std::size_t k = 0; k < passes; ++k) {
      ParamSet p = theta;
      if (!noise.empty())
        for (auto& [name, t] : p) t += noise[k].at(name);
      Tape tape;
      const Var q = posterior_forward(tape, model, p, input, fg, w);
      const Var loss = elbo_node(tape, q, fg, w, eta, true);
      total += tape.value(loss).item();
      if (grad) {
        const Gradients g = tape.backward(loss);
        for (const auto& [name, t] : g) {
          auto [it, inserted] = grad->try_emplace(name, t);
          if (!inserted) it->second += t;
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(passes);
    if (grad)
      for (auto& [name, t] : *grad)
        for (auto& v : t.values()) v *= inv;
    return total * inv;
  }
};

inline std::vector<ParamSet> draw_noise(const ParamSet& theta, std::size_t passes, double sigma, std::mt19937_64& rng) {
  std::vector<ParamSet> out;
  if (passes <= 1 || sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (std::size_t k = 0; k < passes; ++k) {
    ParamSet p = theta;
    for (auto& [name, t] : p)
      for (auto& v : t.values()) v = noise(rng);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

// Gradient ascent on the ELBO in theta with step halving. A step is accepted
// only if the objective, evaluated on the same noise draws, does not drop.
inline ParamSet e_step(const PosteriorModel& model, ParamSet theta, const FactorGraph& fg, std::span<const double> w,
                       const EStepConfig& cfg, std::mt19937_64& rng, std::vector<StepRecord>* log = nullptr,
                       std::size_t round = 0) {
  if (cfg.steps < 1) throw ConfigError("e_step: steps must be >= 1");
  const PosteriorInput input = posterior_input(model, fg);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    detail::NoisyObjective obj{model, input, fg, w, cfg.eta, detail::draw_noise(theta, cfg.n_noise_passes, cfg.noise_sigma, rng)};
    Gradients g;
    const double before = obj.value(theta, &g);
    if (!std::isfinite(before)) throw NumericError("e_step: ELBO is not finite");
    double lr = cfg.lr;
    StepRecord rec{round, before, before, false};
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h, lr *= 0.5) {
      ParamSet trial = detail::axpy(theta, lr, g);
      double after = 0.0;
      try {
        after = obj.value(trial, nullptr);
      } catch (const NumericError&) {
        continue;
      }
      if (after >= before) {
        theta = std::move(trial);
        rec.after = after;
        rec.accepted = true;
        break;
      }
    }
    if (log) log->push_back(rec);
  }
  return theta;
}

// Expected pseudo-log-likelihood sum_i E_q[log P(x_i | MB(x_i))] per
// unobserved variable. The expectation is enumerated over each variable's
// blanket or, for large blankets, estimated by antithetic sampling.
class PseudoLikelihood {
 public:
  PseudoLikelihood(const FactorGraph& fg, std::span<const double> q, const MStepConfig& cfg, std::mt19937_64& rng)
      : num_weights_(fg.weight_names.size()) {
    std::vector<std::uint8_t> world(fg.vars.size(), 0);
    for (std::size_t i = 0; i < fg.vars.size(); ++i)
      if (fg.vars[i].observed()) world[i] = fg.vars[i].value ? 1 : 0;
    std::size_t n_unobserved = 0;
    for (std::uint32_t i = 0; i < fg.vars.size(); ++i) {
      if (fg.vars[i].observed()) continue;
      ++n_unobserved;
      std::vector<std::uint32_t> blanket;
      for (std::uint32_t fi : fg.var_factors[i])
        for (std::uint32_t v : fg.factors[fi].vars)
          if (v != i && !fg.vars[v].observed()) blanket.push_back(v);
      std::sort(blanket.begin(), blanket.end());
      blanket.erase(std::unique(blanket.begin(), blanket.end()), blanket.end());
      const bool exact = cfg.mode == ExpectationMode::kExact ||
                         (cfg.mode == ExpectationMode::kAuto && blanket.size() <= cfg.exact_limit);
      if (exact && blanket.size() > kExactLimit) throw ConfigError("m_step: blanket too large for exact expectation");
      auto add_case = [&](double prob) {
        Case c{i, fg.vars[i].b, q[i], prob, {}};
        for (std::uint32_t fi : fg.var_factors[i]) {
          const Factor& f = fg.factors[fi];
          world[i] = 1;
          const bool on = factor_holds(f, world);
          world[i] = 0;
          const bool off = factor_holds(f, world);
          if (on != off) c.deltas.emplace_back(f.weight, on ? 1.0 : -1.0);
        }
        cases_.push_back(std::move(c));
      };
      if (exact) {
        const std::size_t n = std::size_t{1} << blanket.size();
        for (std::size_t mask = 0; mask < n; ++mask) {
          double prob = 1.0;
          for (std::size_t j = 0; j < blanket.size(); ++j) {
            const bool on = (mask >> j) & 1U;
            world[blanket[j]] = on ? 1 : 0;
            prob *= on ? q[blanket[j]] : 1.0 - q[blanket[j]];
          }
          if (prob > 0.0) add_case(prob);
        }
      } else {
        const std::size_t pairs = std::max<std::size_t>(1, cfg.samples / 2);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::vector<double> u(blanket.size());
        const double prob = 1.0 / static_cast<double>(2 * pairs);
        for (std::size_t s = 0; s < pairs; ++s) {
          for (auto& x : u) x = unif(rng);
          for (int side = 0; side < 2; ++side) {
            for (std::size_t j = 0; j < blanket.size(); ++j) {
              const double uj = side == 0 ? u[j] : 1.0 - u[j];
              world[blanket[j]] = uj < q[blanket[j]] ? 1 : 0;
            }
            add_case(prob);
          }
        }
      }
      for (std::uint32_t v : blanket) world[v] = 0;
    }
    scale_ = 1.0 / static_cast<double>(std::max<std::size_t>(1, n_unobserved));
  }

  double value(std::span<const double> w, std::vector<double>* grad = nullptr) const {
    if (w.size() != num_weights_) throw ShapeError("pseudo-likelihood: weight count mismatch");
    if (grad) grad->assign(num_weights_, 0.0);
    double total = 0.0;
    for (const auto& c : cases_) {
      double logit = c.b;
      for (const auto& [k, d] : c.deltas) logit += w[k] * d;
      // E_{x_i ~ q_i}[x_i * logit - softplus(logit)]
      total += c.prob * (c.q_self * logit - softplus(logit));
      if (grad) {
        const double r = c.prob * (c.q_self - sigmoid(logit));
        for (const auto& [k, d] : c.deltas) (*grad)[k] += r * d;
      }
    }
    if (grad)
      for (auto& g : *grad) g *= scale_;
    return total * scale_;
  }

 private:
  struct Case {
    std::uint32_t var;
    double b;
    double q_self;
    double prob;
    std::vector<std::pair<std::uint32_t, double>> deltas;  // (weight, f(1) - f(0)) when nonzero
  };

  std::size_t num_weights_;
  std::vector<Case> cases_;
  double scale_ = 1.0;
};

// Gradient ascent on the expected pseudo-log-likelihood in w with q fixed.
inline std::vector<double> m_step(std::vector<double> w, const FactorGraph& fg, std::span<const double> q,
                                  const MStepConfig& cfg, std::mt19937_64& rng, std::vector<StepRecord>* log = nullptr,
                                  std::size_t round = 0) {
  check_weights(fg, w);
  const PseudoLikelihood pll(fg, q, cfg, rng);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    std::vector<double> g;
    const double before = pll.value(w, &g);
    double lr = cfg.lr;
    StepRecord rec{round, before, before, false};
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h, lr *= 0.5) {
      std::vector<double> trial = w;
      for (std::size_t k = 0; k < w.size(); ++k) trial[k] += lr * g[k];
      const double after = pll.value(trial);
      if (after >= before) {
        w = std::move(trial);
        rec.after = after;
        rec.accepted = true;
        break;
      }
    }
    if (log) log->push_back(rec);
  }
  return w;
}

struct EmResult {
  ParamSet theta;
  std::vector<double> weights;
  std::vector<double> marginals;       // every variable
  std::vector<double> target_marginals;  // the target predicate, per example
  EmLog log;
};

// q with labeled variables replaced by their labels: in the M-step the
// supervised targets are data, not beliefs.
inline std::vector<double> with_labels(const FactorGraph& fg, std::vector<double> q) {
  for (std::size_t i = 0; i < fg.vars.size(); ++i)
    if (!fg.vars[i].observed() && fg.vars[i].label >= 0) q[i] = static_cast<double>(fg.vars[i].label);
  return q;
}

inline std::vector<double> target_values(const FactorGraph& fg, std::span<const double> q, const std::string& target) {
  const auto ids = fg.vars_of_pred(target);
  std::vector<double> out(ids.size(), 0.0);
  for (std::size_t e = 0; e < ids.size(); ++e) {
    if (ids[e] < 0) throw DataError("example " + fg.example_ids[e] + " has no '" + target + "' variable");
    out[e] = q[static_cast<std::size_t>(ids[e])];
  }
  return out;
}

// Alternates E-steps (posterior parameters) and M-steps (rule weights).
inline EmResult variational_em(const FactorGraph& fg, const PosteriorModel& model, ParamSet theta, std::vector<double> w,
                               const EmConfig& cfg, const std::string& target = "main") {
  if (cfg.rounds < 1) throw ConfigError("variational_em: rounds must be >= 1");
  check_weights(fg, w);
  std::mt19937_64 rng(cfg.seed ^ 0x656dULL);
  EmResult r;
  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    theta = e_step(model, std::move(theta), fg, w, cfg.e, rng, &r.log.e_steps, round);
    std::vector<double> q = posterior_marginals(model, theta, fg, w);
    r.log.elbo.push_back(elbo(fg, w, q, cfg.e.eta));
    if (!fg.weight_names.empty()) {
      const std::vector<double> data = with_labels(fg, std::move(q));
      w = m_step(std::move(w), fg, data, cfg.m, rng, &r.log.m_steps, round);
      std::mt19937_64 eval_rng(cfg.seed ^ (0x706c6cULL + round));
      r.log.pll.push_back(PseudoLikelihood(fg, data, cfg.m, eval_rng).value(w));
    }
    r.log.weights.push_back(w);
  }
  r.theta = std::move(theta);
  r.weights = std::move(w);
  r.marginals = posterior_marginals(model, r.theta, fg, r.weights);
  r.target_marginals = target_values(fg, r.marginals, target);
  return r;
}

struct InferResult {
  std::vector<double> mean;      // per example, target predicate
  std::vector<double> variance;  // population variance over noise passes
};

// Posterior forward on new groundings, averaged over weight-noise replicas of
// theta (a single noise-free pass when sigma is 0 or passes is 1).
inline InferResult reason_infer(const PosteriorModel& model, const ParamSet& theta, std::span<const double> w,
                                const FactorGraph& fg, std::size_t passes, double sigma, std::uint64_t seed,
                                const std::string& target = "main") {
  check_schema(model, fg);
  check_weights(fg, w);
  const PosteriorInput input = posterior_input(model, fg);
  auto run = [&](const ParamSet& p) {
    Tape tape;
    const Var q = posterior_forward(tape, model, p, input, fg, w);
    return target_values(fg, tape.value(q).values(), target);
  };
  InferResult out;
  if (passes <= 1 || sigma == 0.0) {
    out.mean = run(theta);
    out.variance.assign(out.mean.size(), 0.0);
    return out;
  }
  std::mt19937_64 rng(seed ^ 0x696e66ULL);
  const learning::Ensemble ens = learning::perturb_weights(theta, sigma, passes, rng);
  auto stats = learning::ensemble_predict_batch(ens, run);
  out.mean = std::move(stats.mean);
  out.variance = std::move(stats.variance);
  return out;
}

}  // namespace knowgraph::reasoning
