#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/auth_event.hpp"
#include "knowgraph/graphstore/log_reader.hpp"
#include "knowgraph/graphstore/store_io.hpp"
#include "knowgraph/learning/checkpoint.hpp"
#include "knowgraph/reasoning/factor_graph.hpp"
#include "knowgraph/reasoning/posterior.hpp"

namespace knowgraph::reasoning {

using nlohmann::json;

namespace detail {

inline AttrAtom atom_from_json(const json& j) {
  AttrAtom a;
  a.attr = j.at("attr").get<std::string>();
  a.minus = j.value("minus", std::string{});
  a.op = parse_op(j.at("op").get<std::string>());
  a.rhs_attr = j.value("rhs_attr", std::string{});
  if (a.rhs_attr.empty()) a.constant = j.at("const").get<double>();
  return a;
}

inline json atom_to_json(const AttrAtom& a) {
  json j{{"attr", a.attr}, {"op", op_name(a.op)}};
  if (!a.minus.empty()) j["minus"] = a.minus;
  if (a.rhs_attr.empty())
    j["const"] = a.constant;
  else
    j["rhs_attr"] = a.rhs_attr;
  return j;
}

inline Literal literal_from_json(const json& j) { return {j.at("pred").get<std::string>(), j.value("polarity", true)}; }

}  // namespace detail

// Antecedent entries are predicate literals {pred, polarity} or attribute
// tests {attr, op, const | rhs_attr, minus?}; {any_of: [tests]} is a
// disjunction of attribute tests.
inline Rule rule_from_json(const json& j) {
  Rule r;
  r.name = j.at("name").get<std::string>();
  r.kind = parse_kind(j.at("kind").get<std::string>());
  r.weight_id = j.value("tied_weight_id", std::string{});
  for (const auto& a : j.value("antecedent", json::array())) {
    if (a.contains("pred")) {
      r.antecedent.push_back(detail::literal_from_json(a));
    } else if (a.contains("any_of")) {
      AttrClause c;
      for (const auto& x : a.at("any_of")) c.any_of.push_back(detail::atom_from_json(x));
      r.conditions.push_back(std::move(c));
    } else {
      r.conditions.push_back(AttrClause{{detail::atom_from_json(a)}});
    }
  }
  if (j.contains("consequent")) r.consequent = detail::literal_from_json(j.at("consequent"));
  if (!r.conditions.empty() && r.kind != FormulaKind::kThresholdImplication)
    throw ConfigError("rule " + r.name + ": attribute tests need kind threshold_implication");
  r.validate();
  return r;
}

inline json rule_to_json(const Rule& r) {
  json j{{"name", r.name}, {"kind", kind_name(r.kind)}, {"antecedent", json::array()}};
  for (const auto& c : r.conditions) {
    if (c.any_of.size() == 1) {
      j["antecedent"].push_back(detail::atom_to_json(c.any_of[0]));
    } else {
      json any = json::array();
      for (const auto& a : c.any_of) any.push_back(detail::atom_to_json(a));
      j["antecedent"].push_back({{"any_of", any}});
    }
  }
  for (const auto& l : r.antecedent) j["antecedent"].push_back({{"pred", l.pred}, {"polarity", l.polarity}});
  if (r.consequent) j["consequent"] = {{"pred", r.consequent->pred}, {"polarity", r.consequent->polarity}};
  if (!r.weight_id.empty()) j["tied_weight_id"] = r.weight_id;
  return j;
}

inline std::vector<Rule> parse_rules(const json& j) {
  const json& list = j.is_object() ? j.at("rules") : j;
  if (!list.is_array()) throw ConfigError("rule file must hold a JSON list of rules");
  std::vector<Rule> out;
  for (const auto& r : list) out.push_back(rule_from_json(r));
  return out;
}

inline std::vector<Rule> load_rules(const std::filesystem::path& path) {
  try {
    return parse_rules(json::parse(graphstore::read_text(path)));
  } catch (const json::exception& e) {
    throw ConfigError("rule file " + path.string() + ": " + e.what());
  }
}

inline json rules_to_json(const std::vector<Rule>& rules) {
  json out = json::array();
  for (const auto& r : rules) out.push_back(rule_to_json(r));
  return out;
}

// Stable identifier of (rules, target) used to refuse mismatched checkpoints.
inline std::string schema_hash(const std::vector<Rule>& rules, const std::string& target) {
  const std::string canon = json{{"rules", rules_to_json(rules)}, {"target", target}}.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Six significant digits, as in every emitted CSV.
inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline bool parse_bool(std::string_view s, std::size_t line) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE" || s.empty()) return false;
  throw ParseError(line, "expected a boolean, got '" + std::string(s) + "'");
}

inline double parse_double(std::string_view s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "expected a number, got '" + std::string(s) + "'");
  }
}

// Model-output CSV: example_id,predicate_name,z,observed. Examples keep the
// order of their first row.
inline std::vector<ExampleInput> read_model_outputs(const std::filesystem::path& path) {
  std::vector<ExampleInput> out;
  std::map<std::string, std::size_t> index;
  bool header = true;
  graphstore::for_each_line(path.string(), [&](std::string_view line, std::size_t no) {
    if (header) {
      header = false;
      if (line.rfind("example_id", 0) == 0) return true;
    }
    const auto f = graphstore::detail::split_csv(line);
    if (f.size() != 4) throw ParseError(no, "model output rows need 4 fields, got " + std::to_string(f.size()));
    const std::string id(f[0]);
    auto [it, inserted] = index.try_emplace(id, out.size());
    if (inserted) out.push_back(ExampleInput{id, {}, {}, {}});
    const double z = parse_double(f[2], no);
    if (!(z >= 0.0 && z <= 1.0)) throw ParseError(no, "z outside [0,1]");
    out[it->second].preds[std::string(f[1])] = PredicateValue{z, parse_bool(f[3], no)};
    return true;
  });
  return out;
}

inline void write_model_outputs(const std::filesystem::path& path, const std::vector<ExampleInput>& examples) {
  std::ostringstream os;
  os << "example_id,predicate_name,z,observed\n";
  for (const auto& ex : examples)
    for (const auto& [pred, v] : ex.preds) os << ex.id << ',' << pred << ',' << fmt6(v.z) << ',' << (v.observed ? "true" : "false") << '\n';
  graphstore::write_text(path, os.str());
}

// Labels CSV: example_id,label.
inline std::map<std::string, int> read_labels(const std::filesystem::path& path) {
  std::map<std::string, int> out;
  bool header = true;
  graphstore::for_each_line(path.string(), [&](std::string_view line, std::size_t no) {
    if (header) {
      header = false;
      if (line.rfind("example_id", 0) == 0) return true;
    }
    const auto f = graphstore::detail::split_csv(line);
    if (f.size() != 2) throw ParseError(no, "label rows need 2 fields");
    const double y = parse_double(f[1], no);
    if (y != 0.0 && y != 1.0) throw ParseError(no, "labels must be 0 or 1");
    out[std::string(f[0])] = static_cast<int>(y);
    return true;
  });
  return out;
}

struct ReasonerCheckpoint {
  PosteriorModel model;
  std::vector<double> weights;
  std::string schema_hash;
  std::string target = "main";
  json extra;
};

inline void save_reasoner(const std::filesystem::path& path, const ReasonerCheckpoint& ck) {
  json header{{"kind", "reasoner"},
              {"schema_hash", ck.schema_hash},
              {"target", ck.target},
              {"pred_names", ck.model.pred_names},
              {"weight_names", ck.model.weight_names},
              {"weights", ck.weights},
              {"hidden", ck.model.hidden},
              {"mu_dim", ck.model.mu_dim},
              {"refine_iters", ck.model.refine_iters}};
  if (!ck.extra.is_null()) header["extra"] = ck.extra;
  learning::save_checkpoint(path, header, ck.model.params);
}

inline ReasonerCheckpoint load_reasoner(const std::filesystem::path& path) {
  const auto ck = learning::load_checkpoint(path);
  const json& h = ck.header;
  if (h.value("kind", std::string{}) != "reasoner") throw DataError(path.string() + " is not a reasoner checkpoint");
  ReasonerCheckpoint out;
  out.schema_hash = h.at("schema_hash").get<std::string>();
  out.target = h.at("target").get<std::string>();
  out.model.pred_names = h.at("pred_names").get<std::vector<std::string>>();
  out.model.weight_names = h.at("weight_names").get<std::vector<std::string>>();
  out.weights = h.at("weights").get<std::vector<double>>();
  out.model.hidden = h.at("hidden").get<std::size_t>();
  out.model.mu_dim = h.at("mu_dim").get<std::size_t>();
  out.model.refine_iters = h.at("refine_iters").get<std::size_t>();
  out.model.params = ck.params;
  if (h.contains("extra")) out.extra = h.at("extra");
  return out;
}

}  // namespace knowgraph::reasoning
