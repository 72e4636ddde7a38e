#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "knowgraph/error.hpp"
#include "knowgraph/numerics/tape.hpp"

namespace knowgraph {

// Builds a scalar loss on `tape` from `params`, registering each parameter
// through tape.param(name, ...).
using Objective = std::function<Var(Tape& tape, const ParamSet& params)>;

inline double evaluate(const Objective& f, const ParamSet& params) {
  Tape tape;
  const double v = tape.value(f(tape, params)).item();
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
  return v;
}

inline Gradients analytic_gradients(const Objective& f, const ParamSet& params) {
  Tape tape;
  Var loss = f(tape, params);
  return tape.backward(loss);
}

// Max over coordinates of |analytic - numeric| / max(1, |numeric|), using
// central differences. Objectives with a ReLU need inputs nudged off the kink.
inline double grad_check(const Objective& f, const ParamSet& params, double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw ConfigError("grad_check: eps must lie in [1e-7, 1e-3]");
  const Gradients analytic = analytic_gradients(f, params);
  double worst = 0.0;
  ParamSet probe = params;
  for (const auto& [name, value] : params) {
    Tensor& slot = probe.at(name);
    const auto it = analytic.find(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = value[i];
      slot[i] = orig + eps;
      const double up = evaluate(f, probe);
      slot[i] = orig - eps;
      const double down = evaluate(f, probe);
      slot[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = it == analytic.end() ? 0.0 : it->second[i];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

}  // namespace knowgraph
