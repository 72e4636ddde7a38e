#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/snapshot.hpp"
#include "knowgraph/numerics/tape.hpp"

namespace knowgraph::learning {

using graphstore::NodeId;

// D^{-1/2} (A + A^T + I) D^{-1/2} over n nodes, where A counts each directed
// edge once and D holds the row sums of A + A^T + I.
inline SparseOperator normalized_adjacency(std::size_t n, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  std::vector<std::pair<std::uint64_t, double>> cells;
  cells.reserve(2 * edges.size() + n);
  auto key = [n](std::uint64_t r, std::uint64_t c) { return r * n + c; };
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n) throw ShapeError("normalized_adjacency: endpoint out of range");
    cells.emplace_back(key(u, v), 1.0);
    cells.emplace_back(key(v, u), 1.0);
  }
  for (std::size_t i = 0; i < n; ++i) cells.emplace_back(key(i, i), 1.0);
  std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  SparseOperator op;
  op.rows = op.cols = n;
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < cells.size();) {
    std::size_t j = i;
    double w = 0.0;
    while (j < cells.size() && cells[j].first == cells[i].first) w += cells[j++].second;
    const auto r = static_cast<std::uint32_t>(cells[i].first / n);
    const auto c = static_cast<std::uint32_t>(cells[i].first % n);
    op.push(r, c, w);
    degree[r] += w;
    i = j;
  }
  for (std::size_t e = 0; e < op.nnz(); ++e)
    op.weight[e] /= std::sqrt(degree[op.row_index[e]] * degree[op.col_index[e]]);
  return op;
}

inline SparseOperator normalized_adjacency(const graphstore::GraphSnapshot& g) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  edges.reserve(g.edges.size());
  for (const auto& e : g.edges) edges.emplace_back(e.src, e.dst);
  return normalized_adjacency(g.num_nodes(), edges);
}

enum class Decoder : std::uint8_t { kInnerProduct, kBilinear };

inline const char* decoder_name(Decoder d) { return d == Decoder::kBilinear ? "bilinear" : "inner_product"; }

inline Decoder parse_decoder(const std::string& s) {
  if (s == "inner_product") return Decoder::kInnerProduct;
  if (s == "bilinear") return Decoder::kBilinear;
  throw ConfigError("unknown decoder '" + s + "'");
}

// Two-layer GCN with an edge decoder. Parameters live in a ParamSet under
// "<prefix>W1", "b1", "W2", "b2" and, for the bilinear decoder, "M".
struct GcnModel {
  std::size_t in_dim = 0;
  std::size_t hidden = 32;
  Decoder decoder = Decoder::kInnerProduct;
  std::string prefix = "gcn.";
  ParamSet params;

  std::string key(const char* name) const { return prefix + name; }
};

inline Tensor glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(rows, cols);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline GcnModel init_gcn(std::size_t in_dim, std::size_t hidden, Decoder decoder, std::mt19937_64& rng,
                         std::string prefix = "gcn.") {
  if (in_dim == 0 || hidden == 0) throw ConfigError("init_gcn: dimensions must be positive");
  GcnModel m{in_dim, hidden, decoder, std::move(prefix), {}};
  m.params[m.key("W1")] = glorot(in_dim, hidden, rng);
  m.params[m.key("b1")] = Tensor(1, hidden);
  m.params[m.key("W2")] = glorot(hidden, hidden, rng);
  m.params[m.key("b2")] = Tensor(1, hidden);
  if (decoder == Decoder::kBilinear) m.params[m.key("M")] = Tensor::identity(hidden);
  return m;
}

struct GcnVars {
  Var W1, b1, W2, b2;
  Var M;
  bool bilinear = false;
};

inline GcnVars bind_params(Tape& tape, const GcnModel& m, const ParamSet& params) {
  GcnVars v;
  v.W1 = tape.param(m.key("W1"), params.at(m.key("W1")));
  v.b1 = tape.param(m.key("b1"), params.at(m.key("b1")));
  v.W2 = tape.param(m.key("W2"), params.at(m.key("W2")));
  v.b2 = tape.param(m.key("b2"), params.at(m.key("b2")));
  if (m.decoder == Decoder::kBilinear) {
    v.M = tape.param(m.key("M"), params.at(m.key("M")));
    v.bilinear = true;
  }
  return v;
}

// H1 = ReLU(Â X W1 + b1); H = Â H1 W2 + b2. `adj` must outlive the tape.
inline Var gcn_forward(Tape& tape, const SparseOperator& adj, Var x, const GcnVars& p) {
  const Var h1 = tape.relu(tape.add(tape.matmul(tape.spmm(adj, x), p.W1), p.b1));
  return tape.add(tape.matmul(tape.spmm(adj, h1), p.W2), p.b2);
}

// One logit per (src[i], dst[i]): h_u . h_v, or h_u^T M h_v when bilinear.
inline Var edge_logits(Tape& tape, Var h, const std::vector<std::uint32_t>& src, const std::vector<std::uint32_t>& dst,
                       const GcnVars& p) {
  Var hu = tape.gather_rows(h, src);
  const Var hv = tape.gather_rows(h, dst);
  if (p.bilinear) hu = tape.matmul(hu, p.M);
  return tape.row_dot(hu, hv);
}

// Node embeddings without recording gradients.
inline Tensor embed(const GcnModel& m, const ParamSet& params, const SparseOperator& adj, const Tensor& x) {
  Tape tape;
  const GcnVars p = bind_params(tape, m, params);
  return tape.value(gcn_forward(tape, adj, tape.constant(x), p));
}

inline Tensor embed(const GcnModel& m, const SparseOperator& adj, const Tensor& x) { return embed(m, m.params, adj, x); }

// Probability z = sigmoid(logit). For the link model a LOW z marks an
// anomalous edge, so the anomaly score is 1 - z.
struct EdgeScore {
  NodeId src = 0;
  NodeId dst = 0;
  double logit = 0.0;
  double z = 0.5;

  double anomaly() const { return 1.0 - z; }
};

inline EdgeScore score_edge(const Tensor& h, NodeId u, NodeId v, Decoder decoder, const Tensor* bilinear = nullptr) {
  if (u >= h.rows() || v >= h.rows()) throw ShapeError("score_edge: endpoint out of range");
  const auto hu = h.row(u);
  const auto hv = h.row(v);
  double logit = 0.0;
  if (decoder == Decoder::kInnerProduct) {
    for (std::size_t j = 0; j < hu.size(); ++j) logit += hu[j] * hv[j];
  } else {
    if (bilinear == nullptr || bilinear->rows() != hu.size()) throw ShapeError("score_edge: bilinear matrix missing");
    for (std::size_t a = 0; a < hu.size(); ++a) {
      double row = 0.0;
      for (std::size_t b = 0; b < hv.size(); ++b) row += (*bilinear)(a, b) * hv[b];
      logit += hu[a] * row;
    }
  }
  return EdgeScore{u, v, logit, sigmoid(logit)};
}

inline EdgeScore score_edge(const GcnModel& m, const ParamSet& params, const Tensor& h, NodeId u, NodeId v) {
  const Tensor* mat = m.decoder == Decoder::kBilinear ? &params.at(m.key("M")) : nullptr;
  return score_edge(h, u, v, m.decoder, mat);
}

}  // namespace knowgraph::learning
