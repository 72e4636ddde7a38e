// Samples worlds from a two-predicate MLN with a known rule weight and fits
// the weight back by pseudo-likelihood.
//
//   example_weight_recovery [true_weight] [examples]

#include <cmath>
#include <iostream>
#include <random>
#include <string>

#include "knowgraph/reasoning/em.hpp"

using namespace knowgraph;
using namespace knowgraph::reasoning;

int main(int argc, char** argv) try {
  const double truth = argc > 1 ? std::stod(argv[1]) : 1.5;
  const std::size_t n = argc > 2 ? std::stoul(argv[2]) : 2000;

  Rule rule;
  rule.name = "a_implies_b";
  rule.kind = FormulaKind::kImplication;
  rule.antecedent = {{"a", true}};
  rule.consequent = Literal{"b", true};

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> z(0.2, 0.8), u(0.0, 1.0);
  std::vector<ExampleInput> examples(n);
  for (std::size_t e = 0; e < n; ++e) {
    examples[e].id = std::to_string(e);
    examples[e].preds["a"] = {z(rng), false};
    examples[e].preds["b"] = {z(rng), false};
  }
  GroundingOptions opt;
  opt.target = "a";
  const FactorGraph fg = build_factor_graph(examples, {rule}, opt);

  // Each example is independent, so its four joint states can be sampled
  // exactly.
  std::vector<double> world(fg.vars.size(), 0.0);
  for (std::size_t e = 0; e < fg.num_examples(); ++e) {
    const auto i = static_cast<std::size_t>(fg.var_of[e][0]);
    const auto j = static_cast<std::size_t>(fg.var_of[e][1]);
    double mass[4], total = 0.0;
    for (int m = 0; m < 4; ++m) {
      const int xa = m & 1, xb = m >> 1;
      mass[m] = std::exp(fg.vars[i].b * xa + fg.vars[j].b * xb + truth * ((!xa || xb) ? 1.0 : 0.0));
      total += mass[m];
    }
    double r = u(rng) * total;
    int pick = 0;
    while (pick < 3 && r >= mass[pick]) r -= mass[pick++];
    world[i] = pick & 1;
    world[j] = pick >> 1;
  }

  MStepConfig cfg;
  cfg.steps = 300;
  cfg.lr = 2.0;
  const auto w = m_step({0.0}, fg, world, cfg, rng);
  std::cout << "true weight " << truth << " recovered " << w[0] << " from " << n << " worlds\n";
  return 0;
} catch (const std::exception& e) {
  std::cerr << e.what() << "\n";
  return 1;
}
