#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/eval/metrics.hpp"
#include "knowgraph/graphstore/snapshot.hpp"
#include "knowgraph/graphstore/split.hpp"
#include "knowgraph/graphstore/subgraph.hpp"
#include "knowgraph/learning/gcn.hpp"
#include "knowgraph/learning/sampling.hpp"
#include "knowgraph/numerics/tape.hpp"

namespace knowgraph::learning {

using graphstore::GraphSnapshot;

// Enclosing-subgraph classifier: distance-label embeddings feed a two-layer
// GCN over the subgraph, mean-pooled and mapped to one logit. Output is the
// probability that the center pair is malicious.
struct EncgModel {
  std::uint32_t k = 2;
  std::size_t emb_dim = 16;
  std::size_t hidden = 32;
  ParamSet params;

  std::size_t label_rows() const { return static_cast<std::size_t>(k + 2) * (k + 2); }
};

struct EncgHyper {
  std::uint32_t k = 2;
  std::size_t emb_dim = 16;
  std::size_t hidden = 32;
  double lr = 0.05;
  std::size_t epochs = 60;
  std::size_t patience = 10;
  std::size_t batch_size = 64;
  // Per training window: this many edges plus as many sampled non-edges.
  std::size_t samples_per_window = 16;
  std::size_t val_samples_per_window = 64;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return {{"k", k},           {"emb_dim", emb_dim},       {"hidden", hidden},
            {"lr", lr},         {"epochs", epochs},         {"patience", patience},
            {"batch_size", batch_size}, {"samples_per_window", samples_per_window},
            {"val_samples_per_window", val_samples_per_window}, {"seed", seed}};
  }
};

inline EncgModel init_encg(std::uint32_t k, std::size_t emb_dim, std::size_t hidden, std::mt19937_64& rng) {
  if (k < 1) throw ConfigError("encg: k must be >= 1");
  EncgModel m{k, emb_dim, hidden, {}};
  std::normal_distribution<double> small(0.0, 0.1);
  Tensor table(m.label_rows(), emb_dim);
  for (auto& v : table.values()) v = small(rng);
  m.params["encg.E"] = std::move(table);
  m.params["encg.W1"] = glorot(emb_dim, hidden, rng);
  m.params["encg.b1"] = Tensor(1, hidden);
  m.params["encg.W2"] = glorot(hidden, hidden, rng);
  m.params["encg.b2"] = Tensor(1, hidden);
  m.params["encg.Wr"] = glorot(hidden, 1, rng);
  m.params["encg.br"] = Tensor(1, 1);
  return m;
}

// Several subgraphs laid out block-diagonally.
struct EncgBatch {
  SparseOperator adj;
  std::vector<std::uint32_t> label_index;  // per node, row of the label table
  std::vector<std::uint32_t> graph_of;     // per node, subgraph position
  std::vector<double> inv_size;            // per subgraph
  std::size_t count = 0;
};

inline std::uint32_t label_row(const graphstore::DistanceLabel& d, std::uint32_t k) {
  return d.d_src * (k + 2) + d.d_dst;
}

inline EncgBatch make_encg_batch(std::span<const graphstore::EnclosingSubgraph* const> subgraphs, std::uint32_t k) {
  EncgBatch b;
  b.count = subgraphs.size();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  std::uint32_t offset = 0;
  for (std::size_t s = 0; s < subgraphs.size(); ++s) {
    const auto& sg = *subgraphs[s];
    if (sg.k != k) {
      throw ShapeError("encg: subgraph extracted with k=" + std::to_string(sg.k) + " but model expects k=" +
                       std::to_string(k));
    }
    for (const auto& d : sg.dist_labels) {
      b.label_index.push_back(label_row(d, k));
      b.graph_of.push_back(static_cast<std::uint32_t>(s));
    }
    for (const auto& [u, v] : sg.edges) edges.emplace_back(u + offset, v + offset);
    b.inv_size.push_back(1.0 / static_cast<double>(sg.nodes.size()));
    offset += static_cast<std::uint32_t>(sg.nodes.size());
  }
  b.adj = normalized_adjacency(offset, edges);
  return b;
}

inline Var encg_logits(Tape& tape, const EncgBatch& batch, const ParamSet& params) {
  const Var table = tape.param("encg.E", params.at("encg.E"));
  const Var w1 = tape.param("encg.W1", params.at("encg.W1"));
  const Var b1 = tape.param("encg.b1", params.at("encg.b1"));
  const Var w2 = tape.param("encg.W2", params.at("encg.W2"));
  const Var b2 = tape.param("encg.b2", params.at("encg.b2"));
  const Var wr = tape.param("encg.Wr", params.at("encg.Wr"));
  const Var br = tape.param("encg.br", params.at("encg.br"));
  const Var x = tape.gather_rows(table, batch.label_index);
  const Var h1 = tape.relu(tape.add(tape.matmul(tape.spmm(batch.adj, x), w1), b1));
  const Var h2 = tape.add(tape.matmul(tape.spmm(batch.adj, h1), w2), b2);
  const Var pooled = tape.scale_rows(tape.scatter_add_rows(h2, batch.graph_of, batch.count), batch.inv_size);
  return tape.add(tape.matmul(pooled, wr), br);
}

inline std::vector<double> encg_probs(const EncgModel& m, const ParamSet& params,
                                      std::span<const graphstore::EnclosingSubgraph* const> subgraphs) {
  if (subgraphs.empty()) return {};
  const EncgBatch batch = make_encg_batch(subgraphs, m.k);
  Tape tape;
  const Tensor logits = tape.value(encg_logits(tape, batch, params));
  std::vector<double> out(subgraphs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(logits[i]);
  return out;
}

inline std::vector<double> encg_probs(const EncgModel& m, std::span<const graphstore::EnclosingSubgraph> subgraphs) {
  std::vector<const graphstore::EnclosingSubgraph*> ptrs;
  for (const auto& s : subgraphs) ptrs.push_back(&s);
  return encg_probs(m, m.params, ptrs);
}

struct EncgExample {
  graphstore::EnclosingSubgraph subgraph;
  double target = 0.0;  // 1 = malicious or pseudo-anomalous
};

enum class EncgRegime : std::uint8_t { kTrueLabels, kPseudoAnomaly };

struct TrainedEncg {
  EncgModel model;
  EncgRegime regime = EncgRegime::kPseudoAnomaly;
  std::vector<double> train_loss;
  std::vector<double> val_auc;
  double best_val_auc = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Examples from one window. With true labels: malicious edges are positives and
// benign edges negatives. Otherwise sampled non-edges stand in as positives.
inline void collect_encg_examples(const GraphSnapshot& g, EncgRegime regime, std::size_t per_window, std::uint32_t k,
                                  std::mt19937_64& rng, std::vector<EncgExample>& out) {
  if (g.edges.empty()) return;
  const graphstore::UndirectedAdjacency adj(g);
  std::vector<std::size_t> order(g.edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t taken = 0;
  if (regime == EncgRegime::kTrueLabels) {
    for (std::size_t i = 0; i < g.edges.size(); ++i) {
      if (g.labels[i] != graphstore::EdgeLabel::kMalicious) continue;
      out.push_back({graphstore::extract_enclosing_subgraph(g, adj, g.edges[i].src, g.edges[i].dst, k), 1.0});
      ++taken;
    }
    for (std::size_t i : order) {
      if (taken >= 2 * per_window) break;
      if (g.labels[i] == graphstore::EdgeLabel::kMalicious) continue;
      out.push_back({graphstore::extract_enclosing_subgraph(g, adj, g.edges[i].src, g.edges[i].dst, k), 0.0});
      ++taken;
    }
    return;
  }
  const std::size_t n_pos = std::min(per_window, g.edges.size());
  for (std::size_t j = 0; j < n_pos; ++j) {
    const auto& e = g.edges[order[j]];
    out.push_back({graphstore::extract_enclosing_subgraph(g, adj, e.src, e.dst, k), 0.0});
  }
  for (const auto& [u, v] : negative_sample(EdgeSet(g), n_pos, rng))
    out.push_back({graphstore::extract_enclosing_subgraph(g, adj, u, v, k), 1.0});
}

inline double encg_step(EncgModel& m, std::span<const EncgExample* const> batch, double lr) {
  std::vector<const graphstore::EnclosingSubgraph*> sgs;
  std::vector<double> targets;
  for (const auto* ex : batch) {
    sgs.push_back(&ex->subgraph);
    targets.push_back(ex->target);
  }
  const EncgBatch b = make_encg_batch(sgs, m.k);
  Tape tape;
  const Var loss = tape.bce_with_logits(encg_logits(tape, b, m.params), Tensor::column(targets));
  const double value = tape.value(loss).item();
  const Gradients grads = tape.backward(loss);
  for (auto& [name, t] : m.params) {
    const Tensor& g = grads.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
  }
  return value;
}

}  // namespace detail

// Uses true malicious labels when the training windows carry any; otherwise
// trains existing edges against sampled non-edges as pseudo-anomalies.
inline TrainedEncg train_encg(std::span<const GraphSnapshot> snapshots, const graphstore::DatasetSplit& split,
                              const EncgHyper& hp) {
  if (split.train.empty()) throw DataError("train_encg: no training windows");
  std::mt19937_64 rng(hp.seed ^ 0x656e6367ULL);
  TrainedEncg out;
  out.model = init_encg(hp.k, hp.emb_dim, hp.hidden, rng);
  std::size_t train_malicious = 0;
  for (std::size_t pos : split.train) train_malicious += snapshots[pos].malicious_count();
  out.regime = train_malicious > 0 ? EncgRegime::kTrueLabels : EncgRegime::kPseudoAnomaly;

  std::vector<EncgExample> train, val;
  for (std::size_t pos : split.train)
    detail::collect_encg_examples(snapshots[pos], out.regime, hp.samples_per_window, hp.k, rng, train);
  for (std::size_t pos : split.val)
    detail::collect_encg_examples(snapshots[pos], out.regime, hp.val_samples_per_window, hp.k, rng, val);
  const auto positives = std::count_if(train.begin(), train.end(), [](const EncgExample& e) { return e.target > 0.5; });
  if (positives == 0) throw DataError("train_encg: no positive examples");

  std::vector<const graphstore::EnclosingSubgraph*> val_sgs;
  eval::ScoredSet val_set;
  for (const auto& ex : val) {
    val_sgs.push_back(&ex.subgraph);
    val_set.labels.push_back(ex.target > 0.5 ? 1 : 0);
  }
  auto validate = [&](const ParamSet& params) {
    if (val_set.positives() == 0 || val_set.negatives() == 0) return std::numeric_limits<double>::quiet_NaN();
    val_set.scores = encg_probs(out.model, params, val_sgs);
    return eval::roc_auc(val_set);
  };

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  ParamSet best = out.model.params;
  double best_auc = -1.0;
  std::size_t since_best = 0;
  const std::size_t bs = std::max<std::size_t>(1, hp.batch_size);
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const EncgExample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&train[order[i]]);
      try {
        total += detail::encg_step(out.model, batch, hp.lr);
      } catch (const NumericError& e) {
        throw NumericError("encg training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      ++steps;
    }
    out.train_loss.push_back(steps == 0 ? 0.0 : total / static_cast<double>(steps));
    const double auc = validate(out.model.params);
    out.val_auc.push_back(auc);
    if (!std::isfinite(auc) || auc > best_auc) {
      if (std::isfinite(auc)) best_auc = auc;
      best = out.model.params;
      since_best = 0;
    } else if (++since_best >= hp.patience) {
      break;
    }
  }
  out.model.params = std::move(best);
  if (best_auc >= 0.0) out.best_val_auc = best_auc;
  return out;
}

// P(malicious) for pairs of one window, each scored on that window's graph with
// its own edge removed.
inline std::vector<double> encg_pair_probs(const EncgModel& m, const ParamSet& params, const GraphSnapshot& g,
                                           const graphstore::UndirectedAdjacency& adj, std::span<const NodePair> pairs,
                                           std::size_t chunk = 256) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    std::vector<graphstore::EnclosingSubgraph> sgs;
    for (std::size_t i = start; i < std::min(pairs.size(), start + chunk); ++i)
      sgs.push_back(graphstore::extract_enclosing_subgraph(g, adj, pairs[i].first, pairs[i].second, m.k));
    std::vector<const graphstore::EnclosingSubgraph*> ptrs;
    for (const auto& s : sgs) ptrs.push_back(&s);
    const auto probs = encg_probs(m, params, ptrs);
    out.insert(out.end(), probs.begin(), probs.end());
  }
  return out;
}

}  // namespace knowgraph::learning
