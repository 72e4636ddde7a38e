#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/numerics/tensor.hpp"

namespace knowgraph::reasoning {

enum class FormulaKind : std::uint8_t { kImplication, kExclusion, kEquivalence, kThresholdImplication };

inline const char* kind_name(FormulaKind k) {
  switch (k) {
    case FormulaKind::kImplication: return "implication";
    case FormulaKind::kExclusion: return "exclusion";
    case FormulaKind::kEquivalence: return "equivalence";
    case FormulaKind::kThresholdImplication: return "threshold_implication";
  }
  return "?";
}

inline FormulaKind parse_kind(const std::string& s) {
  if (s == "implication") return FormulaKind::kImplication;
  if (s == "exclusion") return FormulaKind::kExclusion;
  if (s == "equivalence") return FormulaKind::kEquivalence;
  if (s == "threshold_implication") return FormulaKind::kThresholdImplication;
  throw ConfigError("unknown rule kind '" + s + "'");
}

struct Literal {
  std::string pred;
  bool polarity = true;

  friend bool operator==(const Literal&, const Literal&) = default;
};

enum class CmpOp : std::uint8_t { kLt, kGt, kNe, kEq };

inline CmpOp parse_op(const std::string& s) {
  if (s == "<") return CmpOp::kLt;
  if (s == ">") return CmpOp::kGt;
  if (s == "!=" || s == "≠") return CmpOp::kNe;
  if (s == "=" || s == "==") return CmpOp::kEq;
  throw ConfigError("unknown comparison '" + s + "'");
}

inline const char* op_name(CmpOp op) {
  switch (op) {
    case CmpOp::kLt: return "<";
    case CmpOp::kGt: return ">";
    case CmpOp::kNe: return "!=";
    case CmpOp::kEq: return "=";
  }
  return "?";
}

// lhs op rhs, where lhs = attr (- minus) and rhs = rhs_attr if set, else constant.
struct AttrAtom {
  std::string attr;
  std::string minus;
  CmpOp op = CmpOp::kLt;
  std::string rhs_attr;
  double constant = 0.0;
};

// A disjunction of atoms; a threshold antecedent is a conjunction of clauses.
struct AttrClause {
  std::vector<AttrAtom> any_of;
};

using AttributeMap = std::map<std::string, double>;

namespace detail {

inline double lookup(const AttributeMap& attrs, const std::string& name) {
  const auto it = attrs.find(name);
  if (it == attrs.end()) throw DataError("missing attribute: " + name);
  return it->second;
}

}  // namespace detail

inline bool eval_atom(const AttrAtom& a, const AttributeMap& attrs) {
  double lhs = detail::lookup(attrs, a.attr);
  if (!a.minus.empty()) lhs -= detail::lookup(attrs, a.minus);
  const double rhs = a.rhs_attr.empty() ? a.constant : detail::lookup(attrs, a.rhs_attr);
  switch (a.op) {
    case CmpOp::kLt: return lhs < rhs;
    case CmpOp::kGt: return lhs > rhs;
    case CmpOp::kNe: return lhs != rhs;
    case CmpOp::kEq: return lhs == rhs;
  }
  return false;
}

// Every referenced attribute is looked up, so a missing one is reported even
// when an earlier clause already decided the result.
inline bool attribute_predicate_eval(std::span<const AttrClause> clauses, const AttributeMap& attrs) {
  bool all = true;
  for (const auto& clause : clauses) {
    bool any = false;
    for (const auto& atom : clause.any_of) any = eval_atom(atom, attrs) || any;
    all = all && any;
  }
  return all;
}

inline constexpr double kEvidenceClamp = 1e-6;

inline double evidence_logodds(double z) {
  const double c = std::clamp(z, kEvidenceClamp, 1.0 - kEvidenceClamp);
  return std::log(c / (1.0 - c));
}

inline constexpr std::size_t kMaxFormulaArity = 8;

// Truth of a grounded formula over literal values. For implications the last
// literal is the consequent and the rest the antecedent conjunction.
inline bool formula_truth(FormulaKind kind, std::span<const bool> lits) {
  switch (kind) {
    case FormulaKind::kImplication:
    case FormulaKind::kThresholdImplication: {
      if (lits.empty()) throw ShapeError("implication needs a consequent");
      bool ante = true;
      for (std::size_t i = 0; i + 1 < lits.size(); ++i) ante = ante && lits[i];
      return !ante || lits.back();
    }
    case FormulaKind::kExclusion: {
      std::size_t on = 0;
      for (bool b : lits) on += b ? 1 : 0;
      return on <= 1;
    }
    case FormulaKind::kEquivalence:
      if (lits.size() != 2) throw ShapeError("equivalence needs exactly two literals");
      return lits[0] == lits[1];
  }
  return false;
}

// Truth table over the variables of a grounded formula: bit j of the index is
// the value of variable j (before polarity is applied).
inline std::vector<std::uint8_t> truth_table(FormulaKind kind, const std::vector<bool>& polarity) {
  const std::size_t m = polarity.size();
  if (m == 0) throw ShapeError("formula needs at least one variable");
  if (m > kMaxFormulaArity) throw ShapeError("formula arity " + std::to_string(m) + " exceeds 8");
  std::vector<std::uint8_t> table(std::size_t{1} << m);
  bool lits[kMaxFormulaArity];
  for (std::size_t mask = 0; mask < table.size(); ++mask) {
    for (std::size_t j = 0; j < m; ++j) lits[j] = (((mask >> j) & 1U) != 0) == polarity[j];
    table[mask] = formula_truth(kind, std::span<const bool>(lits, m)) ? 1 : 0;
  }
  return table;
}

// Mean-field expectation of a formula's truth: the multilinear polynomial
// E(q) = sum_x f(x) prod_j q_j^{x_j} (1-q_j)^{1-x_j}, with its gradient and,
// when requested, its Hessian (diagonal is zero).
struct Expectation {
  double value = 0.0;
  std::vector<double> grad;
  std::vector<double> hess;  // m x m row-major, only when requested
};

inline Expectation expected_truth(std::span<const std::uint8_t> table, std::span<const double> q, bool want_hessian = false) {
  const std::size_t m = q.size();
  if (m > kMaxFormulaArity) throw ShapeError("expected_truth: arity exceeds 8");
  if (table.size() != (std::size_t{1} << m)) throw ShapeError("expected_truth: table size mismatch");
  Expectation e;
  e.grad.assign(m, 0.0);
  if (want_hessian) e.hess.assign(m * m, 0.0);
  double p[kMaxFormulaArity][2];
  for (std::size_t j = 0; j < m; ++j) {
    p[j][1] = q[j];
    p[j][0] = 1.0 - q[j];
  }
  for (std::size_t mask = 0; mask < table.size(); ++mask) {
    if (table[mask] == 0) continue;
    double full = 1.0;
    for (std::size_t j = 0; j < m; ++j) full *= p[j][(mask >> j) & 1U];
    e.value += full;
    for (std::size_t i = 0; i < m; ++i) {
      const unsigned bi = (mask >> i) & 1U;
      double without_i = 1.0;
      for (std::size_t j = 0; j < m; ++j)
        if (j != i) without_i *= p[j][(mask >> j) & 1U];
      const double si = bi ? 1.0 : -1.0;
      e.grad[i] += si * without_i;
      if (!want_hessian) continue;
      for (std::size_t k = i + 1; k < m; ++k) {
        const unsigned bk = (mask >> k) & 1U;
        double without_ik = 1.0;
        for (std::size_t j = 0; j < m; ++j)
          if (j != i && j != k) without_ik *= p[j][(mask >> j) & 1U];
        const double v = si * (bk ? 1.0 : -1.0) * without_ik;
        e.hess[i * m + k] += v;
        e.hess[k * m + i] += v;
      }
    }
  }
  return e;
}

}  // namespace knowgraph::reasoning
