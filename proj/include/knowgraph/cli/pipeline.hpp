#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/cli/config.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/eval/metrics.hpp"
#include "knowgraph/eval/report.hpp"
#include "knowgraph/graphstore/log_reader.hpp"
#include "knowgraph/graphstore/snapshot.hpp"
#include "knowgraph/graphstore/split.hpp"
#include "knowgraph/graphstore/store_io.hpp"
#include "knowgraph/graphstore/subgraph.hpp"
#include "knowgraph/graphstore/synth.hpp"
#include "knowgraph/learning/checkpoint.hpp"
#include "knowgraph/learning/encg.hpp"
#include "knowgraph/learning/ensemble.hpp"
#include "knowgraph/learning/sampling.hpp"
#include "knowgraph/learning/trainer.hpp"
#include "knowgraph/reasoning/em.hpp"
#include "knowgraph/reasoning/posterior.hpp"
#include "knowgraph/reasoning/rules_io.hpp"

namespace knowgraph::cli {

using graphstore::GraphSnapshot;

// ---------------------------------------------------------------- data

struct Dataset {
  std::vector<GraphSnapshot> snapshots;
  graphstore::LabelStats label_stats;
};

inline Dataset dataset_from_events(std::vector<graphstore::AuthEvent> events, const std::vector<graphstore::RedteamEvent>& redteam,
                                   std::int64_t window_secs) {
  Dataset d;
  d.snapshots = graphstore::build_snapshots(events, window_secs);
  d.label_stats = graphstore::label_malicious_edges(d.snapshots, redteam);
  return d;
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
  switch (cfg.data.source) {
    case DataSource::kSynth: {
      graphstore::SynthConfig sc = cfg.data.synth;
      sc.window_secs = cfg.window_secs;
      const auto data = graphstore::synth_generate(sc);
      return dataset_from_events(data.events, data.redteam, cfg.window_secs);
    }
    case DataSource::kLanl: {
      if (cfg.data.auth_path.empty()) throw ConfigError("config: data.auth_path is required for lanl input");
      auto events = graphstore::read_auth_file(cfg.resolve(cfg.data.auth_path).string(), cfg.data.max_events);
      std::vector<graphstore::RedteamEvent> redteam;
      if (!cfg.data.redteam_path.empty()) redteam = graphstore::read_redteam_file(cfg.resolve(cfg.data.redteam_path).string());
      return dataset_from_events(std::move(events), redteam, cfg.window_secs);
    }
    case DataSource::kStore: {
      Dataset d;
      d.snapshots = graphstore::read_store(cfg.resolve(cfg.data.store));
      return d;
    }
  }
  throw ConfigError("config: unknown data source");
}

inline std::size_t global_unique_edges(std::span<const GraphSnapshot> snapshots) {
  std::set<std::uint64_t> keys;
  for (const auto& s : snapshots)
    for (const auto& e : s.edges) keys.insert(learning::pair_key(e.src, e.dst));
  return keys.size();
}

inline json store_summary(std::span<const GraphSnapshot> snapshots) {
  return {{"windows", snapshots.size()},
          {"nodes", snapshots.empty() ? 0 : snapshots.front().num_nodes()},
          {"window_edges", graphstore::total_edges(snapshots)},
          {"unique_edges", global_unique_edges(snapshots)},
          {"malicious", graphstore::total_malicious(snapshots)}};
}

inline std::string summary_line(const json& s) {
  std::ostringstream os;
  os << "windows=" << s.at("windows").get<std::size_t>() << " nodes=" << s.at("nodes").get<std::size_t>()
     << " window_edges=" << s.at("window_edges").get<std::size_t>() << " unique_edges=" << s.at("unique_edges").get<std::size_t>()
     << " malicious=" << s.at("malicious").get<std::size_t>();
  return os.str();
}

// ---------------------------------------------------------------- models

enum ModelMask : unsigned { kMain = 1U, kAuth = 2U, kEncg = 4U, kAllModels = 7U };

inline unsigned parse_model_list(const std::string& list) {
  if (list.empty()) return kAllModels;
  unsigned mask = 0;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "main")
      mask |= kMain;
    else if (item == "auth")
      mask |= kAuth;
    else if (item == "encg")
      mask |= kEncg;
    else
      throw ConfigError("unknown model '" + item + "' (expected main, auth, encg)");
  }
  return mask;
}

struct KnowledgeModels {
  std::optional<learning::TrainedGcn> main;
  std::optional<learning::TrainedGcn> auth;
  std::optional<learning::TrainedEncg> encg;
};

// The three trainings are independent; with jobs > 1 they run concurrently,
// each with its own generator, so the result does not depend on jobs.
inline KnowledgeModels train_models(std::span<const GraphSnapshot> snapshots, const graphstore::DatasetSplit& split,
                                    const ExperimentConfig& cfg, unsigned mask, std::size_t jobs) {
  const auto policy = jobs > 1 ? std::launch::async : std::launch::deferred;
  std::optional<std::future<learning::TrainedGcn>> main, auth;
  std::optional<std::future<learning::TrainedEncg>> encg;
  if (mask & kMain) main = std::async(policy, [&] { return learning::train_main(snapshots, split, cfg.main); });
  if (mask & kAuth) auth = std::async(policy, [&] { return learning::train_auth(snapshots, split, cfg.auth); });
  if (mask & kEncg) encg = std::async(policy, [&] { return learning::train_encg(snapshots, split, cfg.encg); });
  KnowledgeModels out;
  if (main) out.main = main->get();
  if (auth) out.auth = auth->get();
  if (encg) out.encg = encg->get();
  return out;
}

inline json finite_or_null(double v) { return eval::finite_or_null(v); }

inline json train_log_json(const learning::TrainLog& log) {
  return {{"epochs_run", log.train_loss.size()},
          {"best_epoch", log.best_epoch},
          {"best_val_auc", finite_or_null(log.best_val_auc)},
          {"final_train_loss", log.train_loss.empty() ? json(nullptr) : json(log.train_loss.back())},
          {"skipped_windows", log.skipped_windows}};
}

inline json models_json(const KnowledgeModels& m) {
  json j = json::object();
  if (m.main) j["main"] = train_log_json(m.main->log);
  if (m.auth) j["auth"] = train_log_json(m.auth->log);
  if (m.encg) {
    const auto& e = *m.encg;
    j["encg"] = {{"regime", e.regime == learning::EncgRegime::kTrueLabels ? "true_labels" : "pseudo_anomaly"},
                 {"epochs_run", e.train_loss.size()},
                 {"best_val_auc", finite_or_null(e.best_val_auc)}};
  }
  return j;
}

inline void save_gcn(const fs::path& path, const std::string& role, const learning::TrainedGcn& t) {
  const auto& m = t.model;
  learning::save_checkpoint(path,
                            {{"kind", "gcn"},
                             {"role", role},
                             {"in_dim", m.in_dim},
                             {"hidden", m.hidden},
                             {"decoder", learning::decoder_name(m.decoder)},
                             {"prefix", m.prefix},
                             {"log", train_log_json(t.log)}},
                            m.params);
}

inline learning::TrainedGcn load_gcn(const fs::path& path) {
  const auto ck = learning::load_checkpoint(path);
  if (ck.header.value("kind", std::string{}) != "gcn") throw DataError(path.string() + " is not a GCN checkpoint");
  learning::TrainedGcn t;
  t.model.in_dim = ck.header.at("in_dim").get<std::size_t>();
  t.model.hidden = ck.header.at("hidden").get<std::size_t>();
  t.model.decoder = learning::parse_decoder(ck.header.at("decoder").get<std::string>());
  t.model.prefix = ck.header.at("prefix").get<std::string>();
  t.model.params = ck.params;
  const json& log = ck.header.at("log");
  t.log.best_epoch = log.at("best_epoch").get<std::size_t>();
  t.log.best_val_auc = log.at("best_val_auc").is_null() ? std::nan("") : log.at("best_val_auc").get<double>();
  t.log.skipped_windows = log.at("skipped_windows").get<std::size_t>();
  return t;
}

inline void save_encg(const fs::path& path, const learning::TrainedEncg& t) {
  const auto& m = t.model;
  learning::save_checkpoint(path,
                            {{"kind", "encg"},
                             {"k", m.k},
                             {"emb_dim", m.emb_dim},
                             {"hidden", m.hidden},
                             {"regime", t.regime == learning::EncgRegime::kTrueLabels ? "true_labels" : "pseudo_anomaly"},
                             {"best_val_auc", finite_or_null(t.best_val_auc)}},
                            m.params);
}

inline learning::TrainedEncg load_encg(const fs::path& path) {
  const auto ck = learning::load_checkpoint(path);
  if (ck.header.value("kind", std::string{}) != "encg") throw DataError(path.string() + " is not an EncG checkpoint");
  learning::TrainedEncg t;
  t.model.k = ck.header.at("k").get<std::uint32_t>();
  t.model.emb_dim = ck.header.at("emb_dim").get<std::size_t>();
  t.model.hidden = ck.header.at("hidden").get<std::size_t>();
  t.model.params = ck.params;
  t.regime = ck.header.at("regime").get<std::string>() == "true_labels" ? learning::EncgRegime::kTrueLabels
                                                                        : learning::EncgRegime::kPseudoAnomaly;
  const json& auc = ck.header.at("best_val_auc");
  t.best_val_auc = auc.is_null() ? std::nan("") : auc.get<double>();
  return t;
}

// Weight-noise replicas of one model; the stream depends only on the seed and
// the model role.
inline learning::Ensemble model_ensemble(const ParamSet& base, const EnsembleConfig& e, std::uint64_t seed, std::uint64_t role) {
  std::mt19937_64 rng(seed ^ (0x70637300ULL + role));
  return learning::perturb_weights(base, e.sigma, e.replicas, rng);
}

inline void save_models(const fs::path& dir, const KnowledgeModels& m, const ExperimentConfig& cfg, bool with_ensembles) {
  fs::create_directories(dir);
  auto save_replicas = [&](const std::string& role, const ParamSet& base, std::uint64_t id, auto save_one) {
    if (!with_ensembles) return;
    const auto ens = model_ensemble(base, cfg.ensemble, cfg.seed, id);
    for (std::size_t r = 0; r < ens.size(); ++r) save_one(dir / (role + ".r" + std::to_string(r) + ".ckpt"), ens.replicas[r]);
  };
  if (m.main) {
    save_gcn(dir / "main.ckpt", "main", *m.main);
    save_replicas("main", m.main->model.params, 1, [&](const fs::path& p, const ParamSet& params) {
      auto copy = *m.main;
      copy.model.params = params;
      save_gcn(p, "main", copy);
    });
  }
  if (m.auth) {
    save_gcn(dir / "auth.ckpt", "auth", *m.auth);
    save_replicas("auth", m.auth->model.params, 2, [&](const fs::path& p, const ParamSet& params) {
      auto copy = *m.auth;
      copy.model.params = params;
      save_gcn(p, "auth", copy);
    });
  }
  if (m.encg) {
    save_encg(dir / "encg.ckpt", *m.encg);
    save_replicas("encg", m.encg->model.params, 3, [&](const fs::path& p, const ParamSet& params) {
      auto copy = *m.encg;
      copy.model.params = params;
      save_encg(p, copy);
    });
  }
}

inline KnowledgeModels load_models(const fs::path& dir) {
  KnowledgeModels m;
  if (fs::exists(dir / "main.ckpt")) m.main = load_gcn(dir / "main.ckpt");
  if (fs::exists(dir / "auth.ckpt")) m.auth = load_gcn(dir / "auth.ckpt");
  if (fs::exists(dir / "encg.ckpt")) m.encg = load_encg(dir / "encg.ckpt");
  if (!m.main) throw DataError("no main model checkpoint in " + dir.string());
  return m;
}

// ---------------------------------------------------------------- test edges

enum class Segment : std::uint8_t { kReasonerTrain, kTransductive, kInductive };

inline const char* segment_name(Segment s) {
  switch (s) {
    case Segment::kReasonerTrain: return "reasoner_train";
    case Segment::kTransductive: return "transductive";
    case Segment::kInductive: return "inductive";
  }
  return "?";
}

struct TestEdge {
  std::size_t pos = 0;  // snapshot position
  std::uint32_t edge = 0;
  int label = 0;
  Segment segment = Segment::kInductive;
  std::int64_t offset = 0;  // inductive only: windows since the first inductive window
};

// Every edge of every test window. The first `transductive_windows` test
// windows are split, stratified by label, into reasoner training edges and
// held-out transductive edges; later windows are inductive.
inline std::vector<TestEdge> assign_segments(std::span<const GraphSnapshot> snapshots, const graphstore::DatasetSplit& split,
                                             const SplitConfig& sc, std::uint64_t seed) {
  std::vector<TestEdge> out;
  const std::size_t n_trans = std::min(sc.transductive_windows, split.test.size());
  std::int64_t first_inductive = 0;
  if (n_trans < split.test.size()) first_inductive = snapshots[split.test[n_trans]].window_index;
  std::vector<std::size_t> trans_pos, trans_neg;
  for (std::size_t t = 0; t < split.test.size(); ++t) {
    const std::size_t pos = split.test[t];
    const auto& g = snapshots[pos];
    for (std::uint32_t e = 0; e < g.edges.size(); ++e) {
      TestEdge te;
      te.pos = pos;
      te.edge = e;
      te.label = g.labels[e] == graphstore::EdgeLabel::kMalicious ? 1 : 0;
      if (t < n_trans) {
        te.segment = Segment::kTransductive;
        (te.label ? trans_pos : trans_neg).push_back(out.size());
      } else {
        te.segment = Segment::kInductive;
        te.offset = g.window_index - first_inductive;
      }
      out.push_back(te);
    }
  }
  std::mt19937_64 rng(seed ^ 0x73656773ULL);
  for (auto* group : {&trans_pos, &trans_neg}) {
    std::shuffle(group->begin(), group->end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(sc.reasoner_label_fraction * static_cast<double>(group->size())));
    for (std::size_t i = 0; i < take; ++i) out[(*group)[i]].segment = Segment::kReasonerTrain;
  }
  return out;
}

// Model outputs per test edge: main is the anomaly probability 1 - P(link),
// auth is P(NTLM), encg is P(malicious). Missing models leave empty vectors.
struct EdgeScores {
  std::vector<double> main, auth, encg;
};

struct ScoringSets {
  std::vector<ParamSet> main, auth, encg;  // one entry = single model; more = ensemble mean
};

inline ScoringSets single_sets(const KnowledgeModels& m) {
  ScoringSets s;
  if (m.main) s.main = {m.main->model.params};
  if (m.auth) s.auth = {m.auth->model.params};
  if (m.encg) s.encg = {m.encg->model.params};
  return s;
}

inline ScoringSets ensemble_sets(const KnowledgeModels& m, const ExperimentConfig& cfg) {
  ScoringSets s;
  if (m.main) s.main = model_ensemble(m.main->model.params, cfg.ensemble, cfg.seed, 1).replicas;
  if (m.auth) s.auth = model_ensemble(m.auth->model.params, cfg.ensemble, cfg.seed, 2).replicas;
  if (m.encg) s.encg = model_ensemble(m.encg->model.params, cfg.ensemble, cfg.seed, 3).replicas;
  return s;
}

inline EdgeScores score_edges(std::span<const GraphSnapshot> snapshots, std::span<const TestEdge> edges,
                              const KnowledgeModels& models, const ScoringSets& sets) {
  EdgeScores out;
  if (models.main) out.main.assign(edges.size(), 0.0);
  if (models.auth) out.auth.assign(edges.size(), 0.0);
  if (models.encg) out.encg.assign(edges.size(), 0.0);
  learning::MainModelData main_data(snapshots);
  std::size_t i = 0;
  while (i < edges.size()) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].pos == edges[i].pos) ++j;
    const std::size_t pos = edges[i].pos;
    const auto& g = snapshots[pos];
    std::vector<learning::NodePair> pairs;
    for (std::size_t k = i; k < j; ++k) pairs.emplace_back(g.edges[edges[k].edge].src, g.edges[edges[k].edge].dst);
    auto accumulate = [&](std::vector<double>& dst, const std::vector<double>& probs, double scale, bool complement) {
      for (std::size_t k = 0; k < probs.size(); ++k) dst[i + k] += scale * (complement ? 1.0 - probs[k] : probs[k]);
    };
    if (models.main) {
      const double scale = 1.0 / static_cast<double>(sets.main.size());
      for (const auto& p : sets.main) accumulate(out.main, learning::main_link_probs(models.main->model, p, main_data, pos, pairs), scale, true);
    }
    if (models.auth) {
      const auto in = learning::graph_input(g);
      const double scale = 1.0 / static_cast<double>(sets.auth.size());
      for (const auto& p : sets.auth) accumulate(out.auth, learning::auth_probs(models.auth->model, p, in, pairs), scale, false);
    }
    if (models.encg) {
      const graphstore::UndirectedAdjacency adj(g);
      const auto& m = models.encg->model;
      const double scale = 1.0 / static_cast<double>(sets.encg.size());
      constexpr std::size_t kChunk = 256;
      for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
        const std::size_t stop = std::min(pairs.size(), start + kChunk);
        std::vector<graphstore::EnclosingSubgraph> sgs;
        for (std::size_t k = start; k < stop; ++k)
          sgs.push_back(graphstore::extract_enclosing_subgraph(g, adj, pairs[k].first, pairs[k].second, m.k));
        std::vector<const graphstore::EnclosingSubgraph*> ptrs;
        for (const auto& s : sgs) ptrs.push_back(&s);
        for (const auto& p : sets.encg) {
          const auto probs = learning::encg_probs(m, p, ptrs);
          for (std::size_t k = 0; k < probs.size(); ++k) out.encg[i + start + k] += scale * probs[k];
        }
      }
    }
    i = j;
  }
  // Averages of probabilities can drift a hair outside [0,1] through rounding.
  for (auto* v : {&out.main, &out.auth, &out.encg})
    for (double& x : *v) x = std::clamp(x, 0.0, 1.0);
  return out;
}

inline std::string edge_id(std::span<const GraphSnapshot> snapshots, const TestEdge& te) {
  const auto& g = snapshots[te.pos];
  const auto& e = g.edges[te.edge];
  return "w" + std::to_string(g.window_index) + ":" + g.nodes->name(e.src) + ">" + g.nodes->name(e.dst);
}

// Reasoner inputs for the edges of one segment (all segments when nullopt).
inline std::vector<reasoning::ExampleInput> make_examples(std::span<const GraphSnapshot> snapshots, std::span<const TestEdge> edges,
                                                          const EdgeScores& scores, std::optional<Segment> segment,
                                                          bool with_labels, std::vector<std::size_t>* index = nullptr,
                                                          bool auth_observed = false) {
  std::vector<reasoning::ExampleInput> out;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (segment && edges[i].segment != *segment) continue;
    reasoning::ExampleInput ex;
    ex.id = edge_id(snapshots, edges[i]);
    if (!scores.main.empty()) ex.preds["main"] = {scores.main[i], false};
    if (auth_observed) {
      const bool ntlm = snapshots[edges[i].pos].edges[edges[i].edge].attrs.auth_is_ntlm;
      ex.preds["auth"] = {ntlm ? 1.0 : 0.0, true};
    } else if (!scores.auth.empty()) {
      ex.preds["auth"] = {scores.auth[i], false};
    }
    if (!scores.encg.empty()) ex.preds["encg"] = {scores.encg[i], false};
    if (with_labels) ex.labels["main"] = edges[i].label;
    out.push_back(std::move(ex));
    if (index) index->push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------- reasoning

struct ReasonerRun {
  reasoning::PosteriorModel model;
  reasoning::EmResult em;
  std::string schema_hash;
  std::vector<double> scores;    // per test edge (reasoner-train edges get their trained marginal)
  std::vector<double> variance;  // per test edge, over inference passes
};

// EM on the labeled examples, then inference on `all`.
// With `pcs` the E-step averages over weight-noise passes and inference
// returns the mean over noisy posterior replicas; otherwise both are single
// noise-free passes.
inline ReasonerRun fit_and_infer(const std::vector<reasoning::ExampleInput>& train, const std::vector<reasoning::ExampleInput>& all,
                                 const std::vector<reasoning::Rule>& rules, const ExperimentConfig& cfg, bool pcs) {
  if (train.empty()) throw DataError("no labeled examples for the reasoner");
  const reasoning::FactorGraph fg = reasoning::build_factor_graph(train, rules);
  std::mt19937_64 rng(cfg.seed ^ 0x706f7374ULL);
  ReasonerRun run;
  run.model = reasoning::init_posterior(fg, rng, cfg.reasoner.hidden, cfg.reasoner.mu_dim);
  run.schema_hash = reasoning::schema_hash(rules, "main");
  reasoning::EmConfig em = cfg.em;
  if (!pcs) {
    em.e.n_noise_passes = 1;
    em.e.noise_sigma = 0.0;
  }
  std::vector<double> w0(fg.weight_names.size(), 0.0);
  run.em = reasoning::variational_em(fg, run.model, run.model.params, std::move(w0), em, "main");
  run.model.params = run.em.theta;

  const reasoning::FactorGraph fg_all = reasoning::build_factor_graph(all, rules);
  const std::size_t passes = pcs ? cfg.reasoner.infer_passes : 1;
  const double sigma = pcs ? cfg.em.e.noise_sigma : 0.0;
  const auto inf = reasoning::reason_infer(run.model, run.model.params, run.em.weights, fg_all, passes, sigma, cfg.seed, "main");
  run.scores = inf.mean;
  run.variance = inf.variance;
  return run;
}

// Labeled transductive edges train the reasoner; every test edge is scored.
inline ReasonerRun run_reasoner(std::span<const GraphSnapshot> snapshots, std::span<const TestEdge> edges, const EdgeScores& scores,
                                const std::vector<reasoning::Rule>& rules, const ExperimentConfig& cfg, bool pcs) {
  const bool observed = cfg.reasoner.auth_observed;
  auto train = make_examples(snapshots, edges, scores, Segment::kReasonerTrain, true, nullptr, observed);
  if (cfg.reasoner.max_train_examples > 0 && train.size() > cfg.reasoner.max_train_examples) {
    // Keep every positive; thin the negatives uniformly.
    std::mt19937_64 rng(cfg.seed ^ 0x63617000ULL);
    std::vector<std::size_t> neg;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < train.size(); ++i) (train[i].labels.at("main") == 1 ? keep : neg).push_back(i);
    std::shuffle(neg.begin(), neg.end(), rng);
    const std::size_t room = cfg.reasoner.max_train_examples > keep.size() ? cfg.reasoner.max_train_examples - keep.size() : 0;
    keep.insert(keep.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(std::min(room, neg.size())));
    std::sort(keep.begin(), keep.end());
    std::vector<reasoning::ExampleInput> thinned;
    for (std::size_t i : keep) thinned.push_back(std::move(train[i]));
    train = std::move(thinned);
  }
  if (train.empty()) throw DataError("no labeled edges for the reasoner (transductive windows are empty)");
  return fit_and_infer(train, make_examples(snapshots, edges, scores, std::nullopt, false, nullptr, observed), rules, cfg, pcs);
}

inline json rule_weights_json(const reasoning::FactorGraph& fg, std::span<const double> w) {
  json j = json::object();
  for (std::size_t i = 0; i < w.size(); ++i) j[fg.weight_names[i]] = w[i];
  return j;
}

inline json em_log_json(const reasoning::EmLog& log, const std::vector<std::string>& weight_names) {
  std::size_t e_acc = 0, e_bad = 0, m_acc = 0, m_bad = 0;
  for (const auto& r : log.e_steps) {
    e_acc += r.accepted ? 1 : 0;
    e_bad += r.accepted && r.after < r.before - 1e-9 ? 1 : 0;
  }
  for (const auto& r : log.m_steps) {
    m_acc += r.accepted ? 1 : 0;
    m_bad += r.accepted && r.after < r.before - 1e-9 ? 1 : 0;
  }
  json weights = json::array();
  for (const auto& w : log.weights) {
    json row = json::object();
    for (std::size_t i = 0; i < w.size(); ++i) row[weight_names[i]] = w[i];
    weights.push_back(row);
  }
  return {{"elbo", log.elbo},
          {"pll", log.pll},
          {"weights", weights},
          {"e_steps", log.e_steps.size()},
          {"e_accepted", e_acc},
          {"e_decreases", e_bad},
          {"m_steps", log.m_steps.size()},
          {"m_accepted", m_acc},
          {"m_decreases", m_bad}};
}

// ---------------------------------------------------------------- metrics

inline eval::ScoredSet gather(std::span<const TestEdge> edges, std::span<const double> scores, Segment segment,
                              std::optional<std::int64_t> offset = std::nullopt) {
  eval::ScoredSet s;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (edges[i].segment != segment) continue;
    if (offset && edges[i].offset != *offset) continue;
    s.scores.push_back(scores[i]);
    s.labels.push_back(edges[i].label);
  }
  return s;
}

inline double auc_or_nan(const eval::ScoredSet& s) {
  if (s.positives() == 0 || s.negatives() == 0) return std::nan("");
  return eval::roc_auc(s);
}

inline std::string fmt_or_empty(double v) { return std::isfinite(v) ? reasoning::fmt6(v) : std::string{}; }

// Per inductive time shift: edge counts and AUC of every scorer.
inline std::string time_shift_csv(std::span<const TestEdge> edges, const std::vector<std::pair<std::string, const std::vector<double>*>>& scorers) {
  std::set<std::int64_t> offsets;
  for (const auto& e : edges)
    if (e.segment == Segment::kInductive) offsets.insert(e.offset);
  std::ostringstream os;
  os << "offset,n,positives";
  for (const auto& [name, v] : scorers) os << ',' << name << "_auc";
  os << '\n';
  for (std::int64_t off : offsets) {
    const auto first = gather(edges, *scorers.front().second, Segment::kInductive, off);
    os << off << ',' << first.labels.size() << ',' << first.positives();
    for (const auto& [name, v] : scorers) os << ',' << fmt_or_empty(auc_or_nan(gather(edges, *v, Segment::kInductive, off)));
    os << '\n';
  }
  return os.str();
}

inline std::string scores_csv(std::span<const GraphSnapshot> snapshots, std::span<const TestEdge> edges,
                              const std::vector<std::pair<std::string, const std::vector<double>*>>& scorers) {
  std::ostringstream os;
  os << "example_id,segment,offset,label";
  for (const auto& [name, v] : scorers) os << ',' << name;
  os << '\n';
  for (std::size_t i = 0; i < edges.size(); ++i) {
    os << edge_id(snapshots, edges[i]) << ',' << segment_name(edges[i].segment) << ',' << edges[i].offset << ',' << edges[i].label;
    for (const auto& [name, v] : scorers) os << ',' << reasoning::fmt6((*v)[i]);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------- hashing

inline std::string content_hash(const json& report) {
  json copy = report;
  copy.erase("timings");
  copy.erase("content_hash");
  const std::string s = copy.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class Stopwatch {
 public:
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------- full run

struct RunOptions {
  std::size_t jobs = 1;
  bool pcs = true;  // also run the ensembled variant
  bool emit_scores = false;
  fs::path out;  // empty: nothing written
};

struct RunResult {
  json report;
  std::vector<TestEdge> edges;
  EdgeScores single, ensemble;
  std::optional<ReasonerRun> plain, pcs;
};

inline json segment_counts(std::span<const TestEdge> edges) {
  json j = json::object();
  for (Segment s : {Segment::kReasonerTrain, Segment::kTransductive, Segment::kInductive}) {
    std::size_t n = 0, pos = 0;
    for (const auto& e : edges)
      if (e.segment == s) {
        ++n;
        pos += static_cast<std::size_t>(e.label);
      }
    j[segment_name(s)] = {{"n", n}, {"positives", pos}};
  }
  return j;
}

inline std::vector<std::pair<std::string, const std::vector<double>*>> scorer_list(const RunResult& r) {
  std::vector<std::pair<std::string, const std::vector<double>*>> s{{"main", &r.single.main}};
  if (r.plain) s.emplace_back("knowgraph", &r.plain->scores);
  if (r.pcs) {
    s.emplace_back("main_pcs", &r.ensemble.main);
    s.emplace_back("knowgraph_pcs", &r.pcs->scores);
  }
  return s;
}

// Scores every test edge with the knowledge models, runs the reasoner with and
// (optionally) without weight-noise ensembling, and reports each scorer on the
// transductive and inductive edges.
inline RunResult evaluate_models(std::span<const GraphSnapshot> snaps, const graphstore::DatasetSplit& split,
                                 const KnowledgeModels& models, const std::vector<reasoning::Rule>& rules,
                                 const ExperimentConfig& cfg, const RunOptions& opt, json& timings) {
  Stopwatch clock;
  RunResult r;
  r.edges = assign_segments(snaps, split, cfg.split, cfg.seed);
  r.single = score_edges(snaps, r.edges, models, single_sets(models));
  timings["score"] = clock.lap();
  if (opt.pcs) {
    r.ensemble = score_edges(snaps, r.edges, models, ensemble_sets(models, cfg));
    timings["score_pcs"] = clock.lap();
  }
  r.plain = run_reasoner(snaps, r.edges, r.single, rules, cfg, false);
  timings["reason"] = clock.lap();
  if (opt.pcs) {
    r.pcs = run_reasoner(snaps, r.edges, r.ensemble, rules, cfg, true);
    timings["reason_pcs"] = clock.lap();
  }

  const auto scorers = scorer_list(r);
  json metrics = json::object();
  for (Segment seg : {Segment::kTransductive, Segment::kInductive}) {
    json block = json::object();
    for (const auto& [name, v] : scorers) {
      const auto s = gather(r.edges, *v, seg);
      block[name] = s.labels.empty() ? json(nullptr) : eval::metric_report(s, cfg.metrics);
    }
    metrics[segment_name(seg)] = block;
  }
  const auto fg_schema = reasoning::build_factor_graph({}, rules);
  json weights{{"knowgraph", rule_weights_json(fg_schema, r.plain->em.weights)}};
  json em_logs{{"knowgraph", em_log_json(r.plain->em.log, fg_schema.weight_names)}};
  if (r.pcs) {
    weights["knowgraph_pcs"] = rule_weights_json(fg_schema, r.pcs->em.weights);
    em_logs["knowgraph_pcs"] = em_log_json(r.pcs->em.log, fg_schema.weight_names);
  }
  json& rep = r.report;
  rep["config"] = config_to_json(cfg);
  rep["data"] = store_summary(snaps);
  rep["data"]["split"] = {{"train_windows", split.train.size()}, {"val_windows", split.val.size()}, {"test_windows", split.test.size()}};
  rep["data"]["segments"] = segment_counts(r.edges);
  rep["models"] = models_json(models);
  rep["metrics"] = metrics;
  rep["rule_weights"] = weights;
  rep["em"] = em_logs;
  rep["schema_hash"] = r.plain->schema_hash;

  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    graphstore::write_text(opt.out / "time_shift.csv", time_shift_csv(r.edges, scorers));
    for (const auto& [name, v] : scorers) {
      const auto s = gather(r.edges, *v, Segment::kInductive);
      if (!s.labels.empty())
        graphstore::write_text(opt.out / ("calibration_" + name + ".csv"),
                               eval::calibration_csv(eval::ece(s.scores, s.labels, cfg.metrics.bins)));
    }
    if (opt.emit_scores) graphstore::write_text(opt.out / "scores.csv", scores_csv(snaps, r.edges, scorers));
  }
  return r;
}

inline void finish_report(json& rep, const json& timings) {
  rep.erase("content_hash");
  rep.erase("timings");
  rep["content_hash"] = content_hash(rep);
  rep["timings"] = timings;
}

// Data, knowledge models and both reasoner variants from one config.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opt, const Dataset* preloaded = nullptr) {
  Stopwatch clock;
  json timings = json::object();
  Dataset owned;
  if (!preloaded) owned = load_dataset(cfg);
  const Dataset& data = preloaded ? *preloaded : owned;
  timings["data"] = clock.lap();
  const auto split = graphstore::make_split(data.snapshots, cfg.split.mode, cfg.split.val_fraction);
  const auto rules = reasoning::load_rules(cfg.resolve(cfg.rules));
  const KnowledgeModels models = train_models(data.snapshots, split, cfg, kAllModels, opt.jobs);
  timings["train"] = clock.lap();
  RunResult r = evaluate_models(data.snapshots, split, models, rules, cfg, opt, timings);
  finish_report(r.report, timings);
  if (!opt.out.empty()) graphstore::write_text(opt.out / "run_report.json", r.report.dump(2) + "\n");
  return r;
}

}  // namespace knowgraph::cli
