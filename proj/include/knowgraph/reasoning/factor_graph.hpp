#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/reasoning/formula.hpp"

namespace knowgraph::reasoning {

// Rule template. Predicate literals live in `antecedent` (for exclusion and
// equivalence these are all the variables); threshold rules add attribute
// clauses that are evaluated per example into one observed variable.
struct Rule {
  std::string name;
  FormulaKind kind = FormulaKind::kImplication;
  std::vector<Literal> antecedent;
  std::vector<AttrClause> conditions;
  std::optional<Literal> consequent;
  std::string weight_id;  // empty: the rule name

  const std::string& weight_key() const { return weight_id.empty() ? name : weight_id; }

  std::vector<Literal> literals() const {
    std::vector<Literal> out = antecedent;
    if (consequent) out.push_back(*consequent);
    return out;
  }

  std::string condition_pred() const { return name + ".cond"; }

  void validate() const {
    const auto n = literals().size();
    switch (kind) {
      case FormulaKind::kImplication:
        if (!consequent || antecedent.empty()) throw ConfigError("rule " + name + ": implication needs antecedent and consequent");
        break;
      case FormulaKind::kThresholdImplication:
        if (!consequent || conditions.empty()) throw ConfigError("rule " + name + ": threshold rule needs conditions and a consequent");
        break;
      case FormulaKind::kExclusion:
        if (n < 2) throw ConfigError("rule " + name + ": exclusion needs at least two predicates");
        break;
      case FormulaKind::kEquivalence:
        if (n != 2) throw ConfigError("rule " + name + ": equivalence needs exactly two predicates");
        break;
    }
    if (n + (conditions.empty() ? 0 : 1) > kMaxFormulaArity) throw ConfigError("rule " + name + ": arity exceeds 8");
  }
};

// One model output for one example. `observed` turns the value into hard
// evidence (true when z >= 0.5).
struct PredicateValue {
  double z = 0.5;
  bool observed = false;
};

struct ExampleInput {
  std::string id;
  std::map<std::string, PredicateValue> preds;
  AttributeMap attrs;
  std::map<std::string, int> labels;  // supervised targets, 0/1
};

enum class VarStatus : std::uint8_t { kSoftEvidence, kObserved, kLatent };

struct PredicateVar {
  std::uint32_t pred = 0;  // index into FactorGraph::pred_names
  std::uint32_t example = 0;
  VarStatus status = VarStatus::kLatent;
  double z = 0.5;      // soft evidence input
  bool value = false;  // observed value
  double b = 0.0;      // singleton log-odds potential
  int label = -1;      // -1 = unlabeled

  bool observed() const noexcept { return status == VarStatus::kObserved; }
};

struct Factor {
  FormulaKind kind = FormulaKind::kImplication;
  std::uint32_t rule = 0;
  std::uint32_t weight = 0;
  std::vector<std::uint32_t> vars;
  std::vector<bool> polarity;
  std::vector<std::uint8_t> table;  // see truth_table()
};

struct FactorGraph {
  std::vector<PredicateVar> vars;
  std::vector<Factor> factors;
  std::vector<std::vector<std::uint32_t>> var_factors;
  std::vector<std::string> pred_names;
  std::vector<std::string> weight_names;
  std::vector<std::string> rule_names;
  std::vector<std::string> example_ids;
  std::vector<std::vector<std::int32_t>> var_of;  // [example][pred] -> var id or -1

  std::size_t num_examples() const noexcept { return example_ids.size(); }

  std::size_t unobserved_count() const {
    return static_cast<std::size_t>(std::count_if(vars.begin(), vars.end(), [](const PredicateVar& v) { return !v.observed(); }));
  }

  std::optional<std::uint32_t> pred_index(const std::string& name) const {
    const auto it = std::find(pred_names.begin(), pred_names.end(), name);
    if (it == pred_names.end()) return std::nullopt;
    return static_cast<std::uint32_t>(it - pred_names.begin());
  }

  // Variable of `pred` in every example (-1 where absent).
  std::vector<std::int32_t> vars_of_pred(const std::string& pred) const {
    std::vector<std::int32_t> out(num_examples(), -1);
    const auto p = pred_index(pred);
    if (!p) return out;
    for (std::size_t e = 0; e < num_examples(); ++e) out[e] = var_of[e][*p];
    return out;
  }
};

struct GroundingOptions {
  std::string target = "main";
  std::vector<std::string> latent_preds;  // declared latents with no model output
};

// Predicate order shared by training and inference: the target, then rule
// predicates in order of appearance, then threshold condition variables.
inline std::vector<std::string> schema_predicates(const std::vector<Rule>& rules, const GroundingOptions& opts) {
  std::vector<std::string> out{opts.target};
  auto add = [&out](const std::string& p) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  };
  for (const auto& r : rules)
    for (const auto& l : r.literals()) add(l.pred);
  for (const auto& r : rules)
    if (r.kind == FormulaKind::kThresholdImplication) add(r.condition_pred());
  return out;
}

inline std::vector<std::string> schema_weights(const std::vector<Rule>& rules) {
  std::vector<std::string> out;
  for (const auto& r : rules)
    if (std::find(out.begin(), out.end(), r.weight_key()) == out.end()) out.push_back(r.weight_key());
  return out;
}

// One variable per (predicate, example) and one factor per (rule, example).
inline FactorGraph build_factor_graph(const std::vector<ExampleInput>& examples, const std::vector<Rule>& rules,
                                      const GroundingOptions& opts = {}) {
  for (const auto& r : rules) r.validate();
  FactorGraph fg;
  fg.pred_names = schema_predicates(rules, opts);
  fg.weight_names = schema_weights(rules);
  for (const auto& r : rules) fg.rule_names.push_back(r.name);
  const std::set<std::string> latent(opts.latent_preds.begin(), opts.latent_preds.end());
  std::set<std::string> cond_preds;
  for (const auto& r : rules)
    if (r.kind == FormulaKind::kThresholdImplication) cond_preds.insert(r.condition_pred());

  fg.var_of.assign(examples.size(), std::vector<std::int32_t>(fg.pred_names.size(), -1));
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    fg.example_ids.push_back(ex.id);
    for (std::uint32_t p = 0; p < fg.pred_names.size(); ++p) {
      const std::string& name = fg.pred_names[p];
      if (cond_preds.contains(name)) continue;
      PredicateVar v;
      v.pred = p;
      v.example = static_cast<std::uint32_t>(e);
      if (const auto it = ex.preds.find(name); it != ex.preds.end()) {
        v.z = it->second.z;
        if (!(v.z >= 0.0 && v.z <= 1.0)) throw DataError("example " + ex.id + ": " + name + " output outside [0,1]");
        if (it->second.observed) {
          v.status = VarStatus::kObserved;
          v.value = v.z >= 0.5;
        } else {
          v.status = VarStatus::kSoftEvidence;
          v.b = evidence_logodds(v.z);
        }
      } else if (latent.contains(name)) {
        v.status = VarStatus::kLatent;
      } else {
        throw ConfigError("predicate '" + name + "' has no model output, attribute or latent declaration (example " +
                          ex.id + ")");
      }
      if (const auto it = ex.labels.find(name); it != ex.labels.end()) v.label = it->second;
      fg.var_of[e][p] = static_cast<std::int32_t>(fg.vars.size());
      fg.vars.push_back(v);
    }
    for (std::size_t ri = 0; ri < rules.size(); ++ri) {
      const Rule& r = rules[ri];
      Factor f;
      f.kind = r.kind;
      f.rule = static_cast<std::uint32_t>(ri);
      f.weight = static_cast<std::uint32_t>(
          std::find(fg.weight_names.begin(), fg.weight_names.end(), r.weight_key()) - fg.weight_names.begin());
      if (r.kind == FormulaKind::kThresholdImplication) {
        PredicateVar cond;
        cond.pred = *fg.pred_index(r.condition_pred());
        cond.example = static_cast<std::uint32_t>(e);
        cond.status = VarStatus::kObserved;
        cond.value = attribute_predicate_eval(r.conditions, ex.attrs);
        cond.z = cond.value ? 1.0 : 0.0;
        auto& slot = fg.var_of[e][cond.pred];
        if (slot < 0) {
          slot = static_cast<std::int32_t>(fg.vars.size());
          fg.vars.push_back(cond);
        }
        f.vars.push_back(static_cast<std::uint32_t>(slot));
        f.polarity.push_back(true);
      }
      for (const auto& lit : r.literals()) {
        const auto p = fg.pred_index(lit.pred);
        f.vars.push_back(static_cast<std::uint32_t>(fg.var_of[e][*p]));
        f.polarity.push_back(lit.polarity);
      }
      // The condition variable goes first so that the consequent stays last.
      std::vector<std::uint32_t> sorted = f.vars;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ConfigError("rule " + r.name + ": a predicate appears twice");
      f.table = truth_table(f.kind, f.polarity);
      fg.factors.push_back(std::move(f));
    }
  }
  fg.var_factors.assign(fg.vars.size(), {});
  for (std::uint32_t fi = 0; fi < fg.factors.size(); ++fi)
    for (std::uint32_t v : fg.factors[fi].vars) fg.var_factors[v].push_back(fi);
  return fg;
}

// Current mean-field values: q for unobserved variables, 0/1 for observed ones.
inline std::vector<double> factor_q(const Factor& f, std::span<const double> q) {
  std::vector<double> out(f.vars.size());
  for (std::size_t j = 0; j < f.vars.size(); ++j) out[j] = q[f.vars[j]];
  return out;
}

// q with observed variables pinned and unobserved ones set to their evidence.
inline std::vector<double> evidence_q(const FactorGraph& fg) {
  std::vector<double> q(fg.vars.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const auto& v = fg.vars[i];
    q[i] = v.observed() ? (v.value ? 1.0 : 0.0) : sigmoid(v.b);
  }
  return q;
}

}  // namespace knowgraph::reasoning
