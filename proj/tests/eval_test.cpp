#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "knowgraph/eval/report.hpp"

using namespace knowgraph;
using namespace knowgraph::eval;

namespace {

ScoredSet set(std::vector<double> scores, std::vector<int> labels) { return {std::move(scores), std::move(labels)}; }

// Pairwise-count AUC.
double pairwise_auc(const ScoredSet& s) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[i] != 1 || s.labels[j] != 0) continue;
      den += 1.0;
      num += s.scores[i] > s.scores[j] ? 1.0 : (s.scores[i] == s.scores[j] ? 0.5 : 0.0);
    }
  return num / den;
}

// Standard AP as sum over positives of precision at each positive, computed
// from cumulative counts after a stable descending sort.
double cumulative_ap(const ScoredSet& s) {
  std::vector<std::size_t> idx(s.scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  std::vector<double> cum_tp(idx.size());
  double tp = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r) cum_tp[r] = tp += s.labels[idx[r]];
  double ap = 0.0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    if (s.labels[idx[r]] == 1) ap += cum_tp[r] / static_cast<double>(r + 1);
  return ap / tp;
}

// Threshold sweep that tries every observed score as a cut.
double sweep_tp_at_fp(const ScoredSet& s, double fp_rate) {
  double best = 0.0;
  const double p = static_cast<double>(s.positives()), n = static_cast<double>(s.negatives());
  for (double t : s.scores) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.scores.size(); ++i)
      if (s.scores[i] >= t) (s.labels[i] ? tp : fp) += 1.0;
    if (fp / n <= fp_rate + 1e-12) best = std::max(best, tp / p);
  }
  return best;
}

ScoredSet random_set(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution coin(0.3);
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(coin(rng) ? 1 : 0);
    // Coarse scores so ties occur.
    s.scores.push_back(std::round(u(rng) * 20.0) / 20.0);
  }
  s.labels[0] = 1;
  s.labels[1] = 0;
  return s;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_NEAR(roc_auc(set({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0})), 1.0, 1e-9);
  EXPECT_NEAR(roc_auc(set({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0})), 0.75, 1e-9);
  EXPECT_NEAR(roc_auc(set({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0})), 0.5, 1e-9);
  try {
    roc_auc(set({0.1, 0.2}, {1, 1}));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("both classes"), std::string::npos);
  }
  EXPECT_THROW(roc_auc(set({0.1, 0.2}, {1})), DataError);
}

TEST(Auc, MatchesPairwiseOracleAndIsRankInvariant) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto s = random_set(rng, 40);
    const double a = roc_auc(s);
    EXPECT_NEAR(a, pairwise_auc(s), 1e-12);
    for (auto& v : s.scores) v = std::exp(3.0 * v) - 7.0;
    EXPECT_NEAR(roc_auc(s), a, 1e-12);
  }
}

TEST(AveragePrecision, Examples) {
  EXPECT_NEAR(average_precision_at_k(set({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}), 1.0), 1.0, 1e-9);
  EXPECT_NEAR(average_precision_at_k(set({0.9, 0.8, 0.7}, {1, 0, 1}), 1.0), (1.0 + 2.0 / 3.0) / 2.0, 1e-9);
  EXPECT_NEAR(average_precision_at_k(set({0.9, 0.8, 0.7}, {1, 0, 1}), 1.0), 0.8333, 1e-4);
  // Default k = 0.5 cuts to the top ceil(0.5 * 4) = 2 items.
  EXPECT_NEAR(average_precision_at_k(set({0.9, 0.8, 0.7, 0.1}, {0, 1, 1, 0})), 0.5 / 2.0, 1e-12);
  const auto none = average_precision_at_k_detailed(set({0.3, 0.2}, {0, 0}), 1.0);
  EXPECT_TRUE(none.no_positives);
  EXPECT_EQ(none.ap, 0.0);
  EXPECT_THROW(average_precision_at_k(set({0.3}, {1}), 0.0), ConfigError);
  EXPECT_THROW(average_precision_at_k(set({0.3}, {1}), 1.5), ConfigError);
}

TEST(AveragePrecision, FullDepthMatchesCumulativeFormula) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto s = random_set(rng, 35);
    EXPECT_NEAR(average_precision(s), cumulative_ap(s), 1e-12);
  }
}

TEST(TpAtFp, Examples) {
  const auto s = set({0.9, 0.5, 0.8, 0.3, 0.2, 0.1}, {1, 1, 0, 0, 0, 0});
  EXPECT_NEAR(tp_at_fp(s, 0.25), 1.0, 1e-9);
  // Top score is a negative: with no false positives allowed only the cut
  // above it qualifies.
  const auto top_neg = set({0.95, 0.9, 0.5, 0.2}, {0, 1, 1, 0});
  EXPECT_NEAR(tp_at_fp(top_neg, 0.0), 0.0, 1e-12);
  EXPECT_NEAR(tp_at_fp(s, 0.0), 0.5, 1e-12);
  EXPECT_NEAR(tp_at_fp(s, 1.0), 1.0, 1e-12);
  EXPECT_THROW(tp_at_fp(s, 1.5), ConfigError);
  EXPECT_THROW(tp_at_fp(set({0.1, 0.2}, {0, 0}), 0.1), DataError);
}

TEST(TpAtFp, MonotoneAndMatchesSweep) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    const auto s = random_set(rng, 30);
    double prev = -1.0;
    for (double fp = 0.0; fp <= 1.0; fp += 0.05) {
      const double v = tp_at_fp(s, fp);
      EXPECT_GE(v, prev);
      EXPECT_NEAR(v, sweep_tp_at_fp(s, fp), 1e-12);
      prev = v;
    }
  }
}

TEST(Ece, Examples) {
  std::vector<double> p(10, 0.7);
  std::vector<int> y{1, 1, 1, 1, 1, 1, 1, 0, 0, 0};
  EXPECT_NEAR(ece(p, y).ece, 0.0, 1e-9);
  const std::vector<double> high(10, 0.9);
  const std::vector<int> pos(10, 1);
  const auto rep = ece(high, pos);
  EXPECT_NEAR(rep.ece, 0.1, 1e-9);
  ASSERT_EQ(rep.bins.size(), 20U);
  EXPECT_EQ(rep.bins[18].count, 10U);
  // 1.0 falls in the closed last bin.
  EXPECT_EQ(ece(std::vector<double>{1.0}, std::vector<int>{1}).bins[19].count, 1U);
  EXPECT_THROW(ece(std::vector<double>{1.2}, std::vector<int>{1}), DataError);
}

TEST(Ece, CalibratedSamplerIsSmall) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(100000);
  std::vector<int> y(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = u(rng);
    y[i] = u(rng) < p[i] ? 1 : 0;
  }
  const auto rep = ece(p, y);
  EXPECT_LE(rep.ece, 0.01);
  std::size_t total = 0;
  for (const auto& b : rep.bins) total += b.count;
  EXPECT_EQ(total, p.size());
}

TEST(Report, JsonKeysAndCalibrationCsv) {
  const auto s = set({0.9, 0.4, 0.6, 0.1}, {1, 1, 0, 0});
  const auto j = metric_report(s);
  for (const char* key : {"auc", "ap", "ap_k", "k", "tp_at_fp", "ece", "bins", "n", "positives"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_NEAR(j["auc"].get<double>(), 0.75, 1e-12);
  EXPECT_TRUE(j["tp_at_fp"].contains("0.005"));
  EXPECT_TRUE(j["tp_at_fp"].contains("0.01"));
  EXPECT_TRUE(j["tp_at_fp"].contains("0.02"));
  EXPECT_EQ(j["bins"].size(), 20U);

  const auto one_class = metric_report(set({0.2, 0.3}, {0, 0}));
  EXPECT_TRUE(one_class["auc"].is_null());

  const std::string csv = calibration_csv(ece(std::vector<double>(10, 0.9), std::vector<int>(10, 1)));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "bin,lower,upper,mean_confidence,fraction_positive,count");
  std::size_t rows = 0;
  std::string bin18;
  while (std::getline(in, line)) {
    if (rows == 18) bin18 = line;
    ++rows;
  }
  EXPECT_EQ(rows, 20U);
  EXPECT_EQ(bin18, "18,0.9,0.95,0.9,1,10");
}
