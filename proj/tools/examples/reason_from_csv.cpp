// Fits rule weights on labeled model outputs and prints the reasoned score
// next to the raw main-model score for every example.
//
//   example_reason_from_csv model_outputs.csv labels.csv rules.json
//
// Without arguments a small in-memory set is generated instead.

#include <iomanip>
#include <iostream>
#include <random>

#include "knowgraph/cli/pipeline.hpp"
#include "knowgraph/eval/metrics.hpp"

using namespace knowgraph;

namespace {

// main is the link-anomaly score, auth says the edge used NTLM and encg is
// the subgraph classifier. Malicious edges tend to be anomalous and NTLM.
std::vector<reasoning::ExampleInput> toy_examples(std::mt19937_64& rng, std::size_t n) {
  std::bernoulli_distribution attack(0.1);
  std::normal_distribution<double> noise(0.0, 0.15);
  auto clip = [](double v) { return std::clamp(v, 0.02, 0.98); };
  std::vector<reasoning::ExampleInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool bad = attack(rng);
    reasoning::ExampleInput ex;
    ex.id = "e" + std::to_string(i);
    ex.preds["main"] = {clip((bad ? 0.6 : 0.4) + noise(rng)), false};
    ex.preds["auth"] = {clip((bad ? 0.8 : 0.3) + noise(rng)), false};
    ex.preds["encg"] = {clip((bad ? 0.7 : 0.3) + noise(rng)), false};
    ex.labels["main"] = bad ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

const char* kToyRules = R"([
  {"name": "authentication", "kind": "implication", "antecedent": [{"pred": "main"}], "consequent": {"pred": "auth"}},
  {"name": "encg_positive", "kind": "implication", "antecedent": [{"pred": "encg"}], "consequent": {"pred": "main"}},
  {"name": "encg_negative", "kind": "implication", "antecedent": [{"pred": "encg", "polarity": false}],
   "consequent": {"pred": "main", "polarity": false}}
])";

}  // namespace

int main(int argc, char** argv) try {
  std::vector<reasoning::ExampleInput> all, train;
  std::vector<reasoning::Rule> rules;
  std::map<std::string, int> labels;
  if (argc == 4) {
    all = reasoning::read_model_outputs(argv[1]);
    labels = reasoning::read_labels(argv[2]);
    rules = reasoning::load_rules(argv[3]);
    for (const auto& ex : all)
      if (const auto it = labels.find(ex.id); it != labels.end()) {
        train.push_back(ex);
        train.back().labels["main"] = it->second;
      }
  } else if (argc == 1) {
    std::mt19937_64 rng(7);
    all = toy_examples(rng, 400);
    rules = reasoning::parse_rules(nlohmann::json::parse(kToyRules));
    // Half the examples carry labels for fitting.
    for (std::size_t i = 0; i < all.size(); i += 2) train.push_back(all[i]);
    for (auto& ex : all) labels[ex.id] = ex.labels["main"];
  } else {
    std::cerr << "usage: " << argv[0] << " [model_outputs.csv labels.csv rules.json]\n";
    return 2;
  }

  cli::ExperimentConfig cfg;
  const auto run = cli::fit_and_infer(train, all, rules, cfg, false);

  const auto fg = reasoning::build_factor_graph({}, rules);
  std::cout << "rule weights\n";
  for (std::size_t k = 0; k < fg.weight_names.size(); ++k)
    std::cout << "  " << fg.weight_names[k] << " " << run.em.weights[k] << "\n";

  eval::ScoredSet raw, reasoned;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto it = labels.find(all[i].id);
    if (it == labels.end()) continue;
    raw.scores.push_back(all[i].preds.at("main").z);
    reasoned.scores.push_back(run.scores[i]);
    raw.labels.push_back(it->second);
    reasoned.labels.push_back(it->second);
  }
  if (raw.positives() > 0 && raw.negatives() > 0)
    std::cout << std::fixed << std::setprecision(4) << "auc main " << eval::roc_auc(raw) << " reasoned "
              << eval::roc_auc(reasoned) << "\n";
  return 0;
} catch (const std::exception& e) {
  std::cerr << e.what() << "\n";
  return 1;
}
