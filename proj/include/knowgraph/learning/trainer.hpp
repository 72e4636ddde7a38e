#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/eval/metrics.hpp"
#include "knowgraph/graphstore/snapshot.hpp"
#include "knowgraph/graphstore/split.hpp"
#include "knowgraph/learning/gcn.hpp"
#include "knowgraph/learning/sampling.hpp"
#include "knowgraph/numerics/tape.hpp"

namespace knowgraph::learning {

using graphstore::GraphSnapshot;

struct TrainHyper {
  std::size_t hidden = 32;
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  // Cap on supervised edges drawn per window and epoch; 0 keeps every edge.
  std::size_t max_edges_per_window = 0;

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"lr", lr}, {"epochs", epochs}, {"patience", patience}, {"seed", seed},
            {"max_edges_per_window", max_edges_per_window}};
  }
};

struct TrainLog {
  std::vector<double> train_loss;  // mean pre-update loss per epoch
  std::vector<double> val_auc;     // NaN when the validation set has one class
  std::size_t best_epoch = 0;      // epochs completed when the kept parameters were current
  double best_val_auc = std::numeric_limits<double>::quiet_NaN();
  std::size_t skipped_windows = 0;
};

struct TrainedGcn {
  GcnModel model;
  TrainLog log;
};

// Dense inputs the GCN reads for one snapshot.
struct GraphInput {
  SparseOperator adj;
  Tensor x;
};

inline GraphInput graph_input(const GraphSnapshot& g) { return {normalized_adjacency(g), graphstore::node_features(g)}; }

// Input for "no history": every node isolated with zero-degree features.
inline GraphInput empty_graph_input(std::size_t n) {
  GraphSnapshot empty;
  auto index = std::make_shared<graphstore::NodeIndex>();
  for (std::size_t i = 0; i < n; ++i) index->intern(std::to_string(i));
  empty.nodes = index;
  return graph_input(empty);
}

namespace detail {

struct EdgeBatch {
  std::vector<std::uint32_t> src, dst;
  std::vector<double> target;

  void push(std::uint32_t u, std::uint32_t v, double y) {
    src.push_back(u);
    dst.push_back(v);
    target.push_back(y);
  }
};

inline double batch_loss_and_step(GcnModel& model, const GraphInput& in, const EdgeBatch& batch, double lr,
                                  bool apply_step) {
  Tape tape;
  const GcnVars p = bind_params(tape, model, model.params);
  const Var h = gcn_forward(tape, in.adj, tape.constant(in.x), p);
  const Var logits = edge_logits(tape, h, batch.src, batch.dst, p);
  const Var loss = tape.bce_with_logits(logits, Tensor::column(batch.target));
  const double value = tape.value(loss).item();
  if (apply_step) {
    const Gradients grads = tape.backward(loss);
    for (auto& [name, t] : model.params) {
      const Tensor& g = grads.at(name);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * g[i];
    }
  }
  return value;
}

inline std::vector<double> batch_probs(const GcnModel& model, const GraphInput& in, const std::vector<std::uint32_t>& src,
                                       const std::vector<std::uint32_t>& dst) {
  const Tensor h = embed(model, in.adj, in.x);
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = score_edge(model, model.params, h, src[i], dst[i]).z;
  return out;
}

// Shared loop: one full-batch gradient step per training window per epoch,
// validation AUC after each epoch, best-validation parameters kept.
template <typename MakeBatch, typename Validate>
TrainedGcn fit(GcnModel model, std::size_t n_windows, const TrainHyper& hp, MakeBatch&& make_batch,
               const std::vector<const GraphInput*>& inputs, Validate&& validate, std::size_t skipped) {
  TrainedGcn out{model, {}};
  out.log.skipped_windows = skipped;
  ParamSet best = model.params;
  double best_auc = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t w = 0; w < n_windows; ++w) {
      if (inputs[w] == nullptr) continue;
      const EdgeBatch batch = make_batch(w, epoch);
      if (batch.src.empty()) continue;
      try {
        total += batch_loss_and_step(model, *inputs[w], batch, hp.lr, true);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      ++used;
    }
    const double mean_loss = used == 0 ? 0.0 : total / static_cast<double>(used);
    if (!std::isfinite(mean_loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
    out.log.train_loss.push_back(mean_loss);
    const double auc = validate(model);
    out.log.val_auc.push_back(auc);
    const bool have_auc = std::isfinite(auc);
    if (!have_auc || auc > best_auc) {
      if (have_auc) best_auc = auc;
      best = model.params;
      out.log.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= hp.patience) {
      break;
    }
  }
  out.model = std::move(model);
  out.model.params = std::move(best);
  if (best_auc >= 0.0) out.log.best_val_auc = best_auc;
  return out;
}

inline double safe_auc(const eval::ScoredSet& s) {
  if (s.positives() == 0 || s.negatives() == 0) return std::numeric_limits<double>::quiet_NaN();
  return eval::roc_auc(s);
}

}  // namespace detail

// Link model: embeddings come from the previous window's graph and score the
// current window's pairs. Existing edges are class 1, an equal number of
// sampled non-edges class 0. The first window has no history and is skipped.
class MainModelData {
 public:
  MainModelData(std::span<const GraphSnapshot> snapshots) : snapshots_(snapshots) {}

  // Input used to score pairs of window `pos`.
  const GraphInput& context(std::size_t pos) {
    if (pos == 0) {
      if (!empty_) empty_ = std::make_unique<GraphInput>(empty_graph_input(snapshots_.front().num_nodes()));
      return *empty_;
    }
    auto& slot = cache_[pos - 1];
    if (!slot) slot = std::make_unique<GraphInput>(graph_input(snapshots_[pos - 1]));
    return *slot;
  }

  const EdgeSet& edge_set(std::size_t pos) {
    auto& slot = edge_sets_[pos];
    if (!slot) slot = std::make_unique<EdgeSet>(snapshots_[pos]);
    return *slot;
  }

  std::span<const GraphSnapshot> snapshots() const { return snapshots_; }

 private:
  std::span<const GraphSnapshot> snapshots_;
  std::map<std::size_t, std::unique_ptr<GraphInput>> cache_;
  std::map<std::size_t, std::unique_ptr<EdgeSet>> edge_sets_;
  std::unique_ptr<GraphInput> empty_;
};

inline TrainedGcn train_main(std::span<const GraphSnapshot> snapshots, const graphstore::DatasetSplit& split,
                             const TrainHyper& hp) {
  if (split.train.empty()) throw DataError("train_main: no training windows");
  std::mt19937_64 rng(hp.seed ^ 0x6d61696eULL);
  MainModelData data(snapshots);
  GcnModel model = init_gcn(graphstore::kNodeFeatureDim, hp.hidden, Decoder::kInnerProduct, rng, "main.");

  std::vector<std::size_t> windows;
  for (std::size_t pos : split.train)
    if (pos > 0 && !snapshots[pos].edges.empty()) windows.push_back(pos);
  std::vector<const GraphInput*> inputs;
  for (std::size_t pos : windows) inputs.push_back(&data.context(pos));

  auto make_batch = [&](std::size_t w, std::size_t) {
    const auto& g = snapshots[windows[w]];
    detail::EdgeBatch b;
    std::vector<std::size_t> chosen(g.edges.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (hp.max_edges_per_window > 0 && chosen.size() > hp.max_edges_per_window) {
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(hp.max_edges_per_window);
    }
    for (std::size_t i : chosen) b.push(g.edges[i].src, g.edges[i].dst, 1.0);
    for (const auto& [u, v] : negative_sample(data.edge_set(windows[w]), chosen.size(), rng)) b.push(u, v, 0.0);
    return b;
  };

  // Validation pairs are drawn once so the AUC curve is comparable across epochs.
  std::mt19937_64 val_rng(hp.seed ^ 0x76616cULL);
  std::vector<std::pair<std::size_t, detail::EdgeBatch>> val_sets;
  for (std::size_t pos : split.val) {
    const auto& g = snapshots[pos];
    if (g.edges.empty()) continue;
    detail::EdgeBatch b;
    for (const auto& e : g.edges) b.push(e.src, e.dst, 1.0);
    for (const auto& [u, v] : negative_sample(data.edge_set(pos), g.edges.size(), val_rng)) b.push(u, v, 0.0);
    val_sets.emplace_back(pos, std::move(b));
  }
  auto validate = [&](const GcnModel& m) {
    eval::ScoredSet s;
    for (const auto& [pos, b] : val_sets) {
      const auto probs = detail::batch_probs(m, data.context(pos), b.src, b.dst);
      s.scores.insert(s.scores.end(), probs.begin(), probs.end());
      for (double y : b.target) s.labels.push_back(static_cast<int>(y));
    }
    return detail::safe_auc(s);
  };
  return detail::fit(std::move(model), windows.size(), hp, make_batch, inputs, validate, 0);
}

// Link probability z for `pairs` of window `pos` (low z = anomalous).
inline std::vector<double> main_link_probs(const GcnModel& model, const ParamSet& params, MainModelData& data,
                                           std::size_t pos, std::span<const NodePair> pairs) {
  const GraphInput& in = data.context(pos);
  const Tensor h = embed(model, params, in.adj, in.x);
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = score_edge(model, params, h, pairs[i].first, pairs[i].second).z;
  return out;
}

// Edge classifier for "authentication type is NTLM", on the window's own
// graph. Windows where every edge has the same auth class are skipped.
inline TrainedGcn train_auth(std::span<const GraphSnapshot> snapshots, const graphstore::DatasetSplit& split,
                             const TrainHyper& hp) {
  if (split.train.empty()) throw DataError("train_auth: no training windows");
  std::mt19937_64 rng(hp.seed ^ 0x61757468ULL);
  GcnModel model = init_gcn(graphstore::kNodeFeatureDim, hp.hidden, Decoder::kBilinear, rng, "auth.");

  auto one_class = [](const GraphSnapshot& g) {
    std::size_t ntlm = 0;
    for (const auto& e : g.edges) ntlm += e.attrs.auth_is_ntlm ? 1 : 0;
    return ntlm == 0 || ntlm == g.edges.size();
  };
  std::vector<std::size_t> windows;
  std::size_t skipped = 0;
  for (std::size_t pos : split.train) {
    if (one_class(snapshots[pos])) {
      ++skipped;
      continue;
    }
    windows.push_back(pos);
  }
  std::vector<std::unique_ptr<GraphInput>> owned;
  std::vector<const GraphInput*> inputs;
  for (std::size_t pos : windows) {
    owned.push_back(std::make_unique<GraphInput>(graph_input(snapshots[pos])));
    inputs.push_back(owned.back().get());
  }
  auto make_batch = [&](std::size_t w, std::size_t) {
    const auto& g = snapshots[windows[w]];
    detail::EdgeBatch b;
    std::vector<std::size_t> chosen(g.edges.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (hp.max_edges_per_window > 0 && chosen.size() > hp.max_edges_per_window) {
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(hp.max_edges_per_window);
    }
    for (std::size_t i : chosen) b.push(g.edges[i].src, g.edges[i].dst, g.edges[i].attrs.auth_is_ntlm ? 1.0 : 0.0);
    return b;
  };

  std::vector<std::pair<std::unique_ptr<GraphInput>, detail::EdgeBatch>> val_sets;
  for (std::size_t pos : split.val) {
    const auto& g = snapshots[pos];
    if (g.edges.empty()) continue;
    detail::EdgeBatch b;
    for (const auto& e : g.edges) b.push(e.src, e.dst, e.attrs.auth_is_ntlm ? 1.0 : 0.0);
    val_sets.emplace_back(std::make_unique<GraphInput>(graph_input(g)), std::move(b));
  }
  auto validate = [&](const GcnModel& m) {
    eval::ScoredSet s;
    for (const auto& [in, b] : val_sets) {
      const auto probs = detail::batch_probs(m, *in, b.src, b.dst);
      s.scores.insert(s.scores.end(), probs.begin(), probs.end());
      for (double y : b.target) s.labels.push_back(static_cast<int>(y));
    }
    return detail::safe_auc(s);
  };
  return detail::fit(std::move(model), windows.size(), hp, make_batch, inputs, validate, skipped);
}

inline std::vector<double> auth_probs(const GcnModel& model, const ParamSet& params, const GraphInput& in,
                                      std::span<const NodePair> pairs) {
  const Tensor h = embed(model, params, in.adj, in.x);
  std::vector<double> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) out[i] = score_edge(model, params, h, pairs[i].first, pairs[i].second).z;
  return out;
}

}  // namespace knowgraph::learning
