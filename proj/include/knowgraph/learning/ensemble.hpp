#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/numerics/tensor.hpp"

namespace knowgraph::learning {

inline constexpr double kDefaultNoiseSigma = 0.1;
inline constexpr std::size_t kDefaultReplicas = 10;

// Weight-noise replicas of one parameter set.
struct Ensemble {
  std::vector<ParamSet> replicas;
  double sigma = 0.0;

  std::size_t size() const noexcept { return replicas.size(); }
};

// Adds independent N(0, sigma^2) noise to every entry, once per replica. The
// base parameters are not modified.
inline ParamSet perturb(const ParamSet& base, double sigma, std::mt19937_64& rng) {
  ParamSet out = base;
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& [name, t] : out)
    for (auto& v : t.values()) v += noise(rng);
  return out;
}

inline Ensemble perturb_weights(const ParamSet& base, double sigma, std::size_t n, std::mt19937_64& rng) {
  if (sigma < 0.0) throw ConfigError("perturb_weights: sigma must be >= 0");
  if (n < 1) throw ConfigError("perturb_weights: need at least one replica");
  Ensemble e;
  e.sigma = sigma;
  e.replicas.reserve(n);
  for (std::size_t i = 0; i < n; ++i) e.replicas.push_back(perturb(base, sigma, rng));
  return e;
}

struct EnsembleStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::vector<double> per_replica;
};

inline EnsembleStats summarize(std::vector<double> values) {
  EnsembleStats s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  for (double v : values) s.variance += (v - s.mean) * (v - s.mean);
  s.variance /= static_cast<double>(values.size());
  s.per_replica = std::move(values);
  return s;
}

// `predict(const ParamSet&) -> double` is evaluated on every replica in order.
template <typename Predict>
EnsembleStats ensemble_predict(const Ensemble& ensemble, Predict&& predict) {
  std::vector<double> values;
  values.reserve(ensemble.size());
  for (const auto& p : ensemble.replicas) values.push_back(predict(p));
  return summarize(std::move(values));
}

// Batched form: `predict` returns one probability per example; the result
// holds per-example mean and variance over replicas.
struct BatchEnsembleStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

template <typename Predict>
BatchEnsembleStats ensemble_predict_batch(const Ensemble& ensemble, Predict&& predict) {
  BatchEnsembleStats out;
  if (ensemble.size() == 0) return out;
  std::vector<std::vector<double>> runs;
  runs.reserve(ensemble.size());
  for (const auto& p : ensemble.replicas) runs.push_back(predict(p));
  const std::size_t m = runs.front().size();
  out.mean.assign(m, 0.0);
  out.variance.assign(m, 0.0);
  const double n = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    if (r.size() != m) throw ShapeError("ensemble_predict_batch: replicas disagree on batch size");
    for (std::size_t i = 0; i < m; ++i) out.mean[i] += r[i];
  }
  for (auto& v : out.mean) v /= n;
  for (const auto& r : runs)
    for (std::size_t i = 0; i < m; ++i) out.variance[i] += (r[i] - out.mean[i]) * (r[i] - out.mean[i]);
  for (auto& v : out.variance) v /= n;
  return out;
}

}  // namespace knowgraph::learning
