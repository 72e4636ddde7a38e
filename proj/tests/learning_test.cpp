#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <unistd.h>

#include "knowgraph/graphstore/split.hpp"
#include "knowgraph/graphstore/synth.hpp"
#include "knowgraph/learning/checkpoint.hpp"
#include "knowgraph/learning/encg.hpp"
#include "knowgraph/learning/ensemble.hpp"
#include "knowgraph/learning/trainer.hpp"
#include "knowgraph/numerics/grad_check.hpp"

using namespace knowgraph;
using namespace knowgraph::learning;
namespace gs = knowgraph::graphstore;
namespace fs = std::filesystem;

namespace {

Tensor dense(const SparseOperator& op) {
  Tensor t(op.rows, op.cols);
  for (std::size_t e = 0; e < op.nnz(); ++e) t(op.row_index[e], op.col_index[e]) += op.weight[e];
  return t;
}

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

gs::AuthEvent event(std::int64_t t, const std::string& s, const std::string& d, bool ntlm) {
  gs::AuthEvent ev;
  ev.time = t;
  ev.src_user = ev.dst_user = "U@D";
  ev.src_computer = s;
  ev.dst_computer = d;
  ev.auth_type = gs::AuthType::parse(ntlm ? "NTLM" : "Kerberos");
  ev.success = true;
  return ev;
}

struct SmallData {
  std::vector<gs::GraphSnapshot> snaps;
  gs::DatasetSplit split;
};

SmallData small_synth(std::uint64_t seed) {
  gs::SynthConfig cfg;
  cfg.n_computers = 60;
  cfg.n_windows = 12;
  cfg.benign_rate = 80;
  cfg.malicious_rate = 1.0;
  cfg.community_count = 4;
  cfg.seed = seed;
  const auto d = gs::synth_generate(cfg);
  SmallData out;
  out.snaps = gs::build_snapshots(d.events, cfg.window_secs);
  gs::label_malicious_edges(out.snaps, d.redteam);
  out.split = gs::make_split(out.snaps, gs::SplitMode::kInductive, 0.2);
  return out;
}

// Subgraph with explicit local structure.
gs::EnclosingSubgraph subgraph(std::uint32_t k, std::vector<gs::DistanceLabel> labels,
                               std::vector<std::pair<std::uint32_t, std::uint32_t>> edges) {
  gs::EnclosingSubgraph s;
  s.k = k;
  for (std::uint32_t i = 0; i < labels.size(); ++i) s.nodes.push_back(i);
  s.dist_labels = std::move(labels);
  s.edges = std::move(edges);
  return s;
}

// Smallest |pre-activation| of the first GCN layer, to keep ReLU kinks out of
// finite differences.
double min_preactivation(const SparseOperator& adj, const Tensor& x, const Tensor& w1, const Tensor& b1) {
  const Tensor p = matmul(adj.apply(x), w1);
  double m = 1e9;
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t j = 0; j < p.cols(); ++j) m = std::min(m, std::abs(p(i, j) + b1(0, j)));
  return m;
}

}  // namespace

TEST(Adjacency, TwoNodesIsHalfEverywhere) {
  const std::vector<std::pair<std::uint32_t, std::uint32_t>> e{{0, 1}};
  const Tensor a = dense(normalized_adjacency(2, e));
  for (double v : a.values()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Adjacency, IsolatedNodeIsOne) {
  const Tensor a = dense(normalized_adjacency(1, {}));
  EXPECT_EQ(a, Tensor::from_rows({{1.0}}));
}

TEST(Adjacency, SymmetricWithUnitSpectralBound) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::uint32_t> pick(0, 9);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e;
  for (int i = 0; i < 20; ++i) e.emplace_back(pick(rng), pick(rng));
  const Tensor a = dense(normalized_adjacency(10, e));
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(a(i, j), a(j, i), 1e-15);
  // Power iteration: the largest eigenvalue of D^-1/2 (A+I) D^-1/2 is 1.
  Tensor v(10, 1, 1.0);
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    Tensor w = matmul(a, v);
    double norm = 0.0;
    for (double x : w.values()) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : w.values()) x /= norm;
    lambda = norm;
    v = w;
  }
  EXPECT_LE(lambda, 1.0 + 1e-9);
}

TEST(Gcn, ZeroWeightsGiveBiasOnly) {
  std::mt19937_64 rng(1);
  GcnModel m = init_gcn(3, 4, Decoder::kInnerProduct, rng);
  for (auto& [name, t] : m.params) t.fill(0.0);
  m.params.at("gcn.b2") = Tensor::from_rows({{1.0, 2.0, 0.0, -1.0}});
  const std::vector<std::pair<std::uint32_t, std::uint32_t>> e{{0, 1}, {1, 2}};
  const Tensor h = embed(m, normalized_adjacency(3, e), random_tensor(3, 3, rng));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(std::vector<double>(h.row(i).begin(), h.row(i).end()),
                                                (std::vector<double>{1.0, 2.0, 0.0, -1.0}));
}

TEST(Gcn, FirstLayerWithIdentityIsAdjacency) {
  const std::vector<std::pair<std::uint32_t, std::uint32_t>> e{{0, 1}, {1, 2}};
  const SparseOperator adj = normalized_adjacency(3, e);
  Tape tape;
  const Var h1 = tape.relu(tape.matmul(tape.spmm(adj, tape.constant(Tensor::identity(3))), tape.constant(Tensor::identity(3))));
  EXPECT_LT(max_abs_diff(tape.value(h1), dense(adj)), 1e-15);
  EXPECT_NEAR(tape.value(h1)(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(tape.value(h1)(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
}

TEST(Gcn, PermutationEquivariant) {
  std::mt19937_64 rng(8);
  const std::size_t n = 7;
  const GcnModel m = init_gcn(5, 6, Decoder::kBilinear, rng);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> e{{0, 1}, {1, 2}, {2, 3}, {4, 5}, {5, 6}, {6, 0}, {3, 5}};
  const Tensor x = random_tensor(n, 5, rng);
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0U);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pe;
  for (auto [u, v] : e) pe.emplace_back(perm[u], perm[v]);
  Tensor px(n, 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 5; ++j) px(perm[i], j) = x(i, j);
  const Tensor h = embed(m, normalized_adjacency(n, e), x);
  const Tensor ph = embed(m, normalized_adjacency(n, pe), px);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) EXPECT_NEAR(ph(perm[i], j), h(i, j), 1e-12);
  EXPECT_NEAR(score_edge(m, m.params, h, 1, 2).z, score_edge(m, m.params, ph, perm[1], perm[2]).z, 1e-12);
}

TEST(ScoreEdge, Examples) {
  const Tensor zero(3, 4);
  EXPECT_DOUBLE_EQ(score_edge(zero, 0, 1, Decoder::kInnerProduct).z, 0.5);
  const Tensor h = Tensor::from_rows({{1.0, 0.0}, {1.0, 0.0}});
  const auto s = score_edge(h, 0, 1, Decoder::kInnerProduct);
  EXPECT_NEAR(s.z, 0.7311, 1e-4);
  EXPECT_NEAR(s.anomaly(), 1.0 - 0.7311, 1e-4);
  std::mt19937_64 rng(2);
  const Tensor r = random_tensor(5, 3, rng);
  EXPECT_DOUBLE_EQ(score_edge(r, 1, 4, Decoder::kInnerProduct).z, score_edge(r, 4, 1, Decoder::kInnerProduct).z);
  EXPECT_THROW(score_edge(r, 0, 9, Decoder::kInnerProduct), ShapeError);
  EXPECT_THROW(score_edge(r, 0, 1, Decoder::kBilinear), ShapeError);
}

TEST(NegativeSample, Properties) {
  std::vector<gs::AuthEvent> evs;
  for (int i = 0; i < 9; ++i) evs.push_back(event(1, "C" + std::to_string(i), "C" + std::to_string(i + 1), false));
  const auto g = gs::build_snapshots(evs).front();
  std::mt19937_64 rng(3);
  EXPECT_TRUE(negative_sample(g, 0, rng).empty());
  const EdgeSet set(g);
  const auto neg = negative_sample(g, 200, rng);
  ASSERT_EQ(neg.size(), 200U);
  for (const auto& [u, v] : neg) {
    EXPECT_NE(u, v);
    EXPECT_FALSE(set.connected(u, v));
    EXPECT_FALSE(set.connected(v, u));
  }
  std::mt19937_64 a(11), b(11);
  EXPECT_EQ(negative_sample(g, 50, a), negative_sample(g, 50, b));

  const auto complete = gs::build_snapshots(std::vector<gs::AuthEvent>{event(1, "A", "B", false)}).front();
  std::mt19937_64 c(1);
  EXPECT_THROW(negative_sample(complete, 1, c), DataError);
}

TEST(GradCheck, GcnLinkLossTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const std::vector<std::pair<std::uint32_t, std::uint32_t>> e{{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 3}};
    const SparseOperator adj = normalized_adjacency(6, e);
    GcnModel m = init_gcn(4, 5, seed % 2 ? Decoder::kBilinear : Decoder::kInnerProduct, rng);
    Tensor x = random_tensor(6, 4, rng);
    std::normal_distribution<double> nb(0.0, 0.3);
    for (auto& v : m.params.at("gcn.b1").values()) v = nb(rng);
    while (min_preactivation(adj, x, m.params.at("gcn.W1"), m.params.at("gcn.b1")) < 1e-3) x = random_tensor(6, 4, rng);
    const std::vector<std::uint32_t> src{0, 1, 2, 0, 5}, dst{1, 2, 3, 4, 2};
    const Tensor y = Tensor::column({1, 1, 1, 0, 0});
    const Objective f = [&](Tape& t, const ParamSet& ps) {
      const GcnVars p = bind_params(t, m, ps);
      const Var h = gcn_forward(t, adj, t.constant(x), p);
      return t.bce_with_logits(edge_logits(t, h, src, dst, p), y);
    };
    EXPECT_LT(grad_check(f, m.params), 1e-6) << "seed " << seed;
  }
}

TEST(Encg, GradCheck) {
  std::mt19937_64 rng(21);
  const EncgModel m = init_encg(1, 4, 5, rng);
  const auto a = subgraph(1, {{0, 2}, {2, 0}, {1, 1}, {1, 2}}, {{0, 2}, {1, 2}, {0, 3}});
  const auto b = subgraph(1, {{0, 2}, {2, 0}}, {});
  const std::vector<const gs::EnclosingSubgraph*> ptrs{&a, &b};
  const EncgBatch batch = make_encg_batch(ptrs, 1);
  const Tensor y = Tensor::column({1.0, 0.0});
  // Nudge W1 until the first-layer pre-activations stay off the ReLU kink.
  ParamSet p = m.params;
  auto pre_ok = [&] {
    Tape t;
    const Var x = t.gather_rows(t.constant(p.at("encg.E")), batch.label_index);
    const Tensor pre = t.value(t.add(t.matmul(t.spmm(batch.adj, x), t.constant(p.at("encg.W1"))), t.constant(p.at("encg.b1"))));
    return std::all_of(pre.values().begin(), pre.values().end(), [](double v) { return std::abs(v) > 1e-4; });
  };
  while (!pre_ok()) p.at("encg.W1") = random_tensor(4, 5, rng, 0.5);
  const Objective f = [&](Tape& t, const ParamSet& ps) { return t.bce_with_logits(encg_logits(t, batch, ps), y); };
  EXPECT_LT(grad_check(f, p), 1e-6);
}

TEST(Encg, PermutationInvariant) {
  std::mt19937_64 rng(5);
  const EncgModel m = init_encg(2, 6, 8, rng);
  const auto a = subgraph(2, {{0, 3}, {3, 0}, {1, 2}, {2, 1}, {1, 1}}, {{0, 2}, {1, 3}, {2, 4}, {3, 4}});
  // Reverse the local order and remap edges.
  gs::EnclosingSubgraph b = a;
  const std::uint32_t n = 5;
  std::reverse(b.dist_labels.begin(), b.dist_labels.end());
  b.edges.clear();
  for (auto [u, v] : a.edges) b.edges.emplace_back(n - 1 - v, n - 1 - u);
  const std::vector<gs::EnclosingSubgraph> both{a, b};
  const auto probs = encg_probs(m, both);
  EXPECT_NEAR(probs[0], probs[1], 1e-12);
}

TEST(Encg, KMismatchIsShapeError) {
  std::mt19937_64 rng(5);
  const EncgModel m = init_encg(2, 4, 4, rng);
  const std::vector<gs::EnclosingSubgraph> one{subgraph(1, {{0, 2}, {2, 0}}, {})};
  EXPECT_THROW(encg_probs(m, one), ShapeError);
  EXPECT_THROW(init_encg(0, 4, 4, rng), ConfigError);
}

TEST(Ensemble, ZeroSigmaReplicasAreIdentical) {
  std::mt19937_64 rng(1);
  const ParamSet base{{"w", random_tensor(3, 3, rng)}};
  const auto e = perturb_weights(base, 0.0, 4, rng);
  ASSERT_EQ(e.size(), 4U);
  for (const auto& r : e.replicas) EXPECT_EQ(r, base);
  EXPECT_THROW(perturb_weights(base, -1.0, 2, rng), ConfigError);
  EXPECT_THROW(perturb_weights(base, 0.1, 0, rng), ConfigError);
}

TEST(Ensemble, NoiseMeanWithinThreeStandardErrors) {
  std::mt19937_64 rng(17);
  const ParamSet base{{"w", Tensor::scalar(0.7)}};
  const double sigma = 0.1;
  const std::size_t n = 10000;
  const auto e = perturb_weights(base, sigma, n, rng);
  double mean = 0.0, var = 0.0;
  for (const auto& r : e.replicas) mean += r.at("w").item();
  mean /= static_cast<double>(n);
  for (const auto& r : e.replicas) var += std::pow(r.at("w").item() - mean, 2);
  var /= static_cast<double>(n - 1);
  EXPECT_LT(std::abs(mean - 0.7), 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(std::sqrt(var), sigma, 0.005);
}

TEST(Ensemble, Summaries) {
  const auto s = summarize({0.2, 0.8});
  EXPECT_NEAR(s.mean, 0.5, 1e-15);
  EXPECT_NEAR(s.variance, 0.09, 1e-15);
  EXPECT_EQ(summarize({0.3}).variance, 0.0);

  Ensemble e;
  e.replicas = {ParamSet{{"a", Tensor::scalar(0.2)}}, ParamSet{{"a", Tensor::scalar(0.8)}}};
  const auto b = ensemble_predict_batch(e, [](const ParamSet& p) {
    return std::vector<double>{p.at("a").item(), 1.0};
  });
  EXPECT_NEAR(b.mean[0], 0.5, 1e-15);
  EXPECT_NEAR(b.variance[0], 0.09, 1e-15);
  EXPECT_EQ(b.variance[1], 0.0);
}

TEST(Training, AuthSkipsSingleClassWindow) {
  std::vector<gs::AuthEvent> evs;
  const std::vector<std::string> c{"A", "B", "C", "D", "E"};
  for (int w = 0; w < 4; ++w) {
    const std::int64_t t = w * 1800;
    for (std::size_t i = 0; i + 1 < c.size(); ++i) evs.push_back(event(t, c[i], c[i + 1], w == 0 || i % 2 == 0));
  }
  const auto snaps = gs::build_snapshots(evs);
  gs::DatasetSplit split;
  split.train = {0, 1, 2};
  split.val = {3};
  TrainHyper hp;
  hp.hidden = 4;
  hp.epochs = 3;
  const auto out = train_auth(snaps, split, hp);
  EXPECT_EQ(out.log.skipped_windows, 1U);
  EXPECT_EQ(out.log.train_loss.size(), 3U);
}

TEST(Training, ZeroEpochsLeavesInitialParameters) {
  const auto d = small_synth(3);
  TrainHyper hp;
  hp.hidden = 8;
  hp.epochs = 0;
  hp.seed = 3;
  const auto out = train_main(d.snaps, d.split, hp);
  std::mt19937_64 rng(hp.seed ^ 0x6d61696eULL);
  const GcnModel init = init_gcn(gs::kNodeFeatureDim, 8, Decoder::kInnerProduct, rng, "main.");
  EXPECT_EQ(out.model.params, init.params);
  EXPECT_TRUE(out.log.train_loss.empty());
}

TEST(Training, DeterministicAndLossDecreases) {
  const auto d = small_synth(4);
  TrainHyper hp;
  hp.hidden = 8;
  hp.epochs = 15;
  hp.patience = 100;
  hp.seed = 4;
  const auto a = train_main(d.snaps, d.split, hp);
  const auto b = train_main(d.snaps, d.split, hp);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.log.train_loss, b.log.train_loss);
  ASSERT_EQ(a.log.train_loss.size(), 15U);
  EXPECT_LT(a.log.train_loss.back(), a.log.train_loss.front());
}

TEST(Training, EncgRunsOnPseudoAnomalies) {
  const auto d = small_synth(5);
  EncgHyper hp;
  hp.k = 1;
  hp.emb_dim = 4;
  hp.hidden = 6;
  hp.epochs = 3;
  hp.samples_per_window = 8;
  hp.val_samples_per_window = 16;
  const auto out = train_encg(d.snaps, d.split, hp);
  EXPECT_EQ(out.regime, EncgRegime::kPseudoAnomaly);
  EXPECT_FALSE(out.train_loss.empty());
  for (double l : out.train_loss) EXPECT_TRUE(std::isfinite(l));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  std::mt19937_64 rng(99);
  ParamSet p{{"a", random_tensor(3, 4, rng)}, {"b", Tensor::scalar(-0.0)}, {"c", Tensor::scalar(1e-300)}};
  const fs::path path = fs::temp_directory_path() / ("knowgraph_ck_" + std::to_string(::getpid()) + ".ckpt");
  save_checkpoint(path, {{"kind", "test"}, {"hidden", 4}}, p);
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.header.at("kind"), "test");
  EXPECT_FALSE(ck.header.contains("params"));
  ASSERT_EQ(ck.params.size(), p.size());
  for (const auto& [name, t] : p) {
    const Tensor& u = ck.params.at(name);
    ASSERT_TRUE(u.same_shape(t));
    for (std::size_t i = 0; i < t.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(u[i]), std::bit_cast<std::uint64_t>(t[i]));
  }
  fs::resize_file(path, fs::file_size(path) - 3);
  EXPECT_THROW(load_checkpoint(path), DataError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), DataError);
}
