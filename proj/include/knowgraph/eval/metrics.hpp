#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "knowgraph/error.hpp"

namespace knowgraph::eval {

// Higher score = more likely positive. Labels are 0/1.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;

  void validate() const {
    if (scores.size() != labels.size()) throw DataError("ScoredSet: scores and labels differ in length");
    for (int l : labels)
      if (l != 0 && l != 1) throw DataError("ScoredSet: labels must be 0 or 1");
  }

  std::size_t positives() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }
  std::size_t negatives() const { return labels.size() - positives(); }
};

namespace detail {

inline void require_both_classes(const ScoredSet& s, const char* metric) {
  s.validate();
  if (s.positives() == 0 || s.negatives() == 0) {
    throw DataError(std::string(metric) + ": both classes are required");
  }
}

// Indices sorted by score descending; equal scores keep index order.
inline std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace detail

// Mann-Whitney U / (P * N); tied positive-negative pairs count one half.
inline double roc_auc(const ScoredSet& s) {
  detail::require_both_classes(s, "roc_auc");
  std::vector<std::size_t> idx(s.scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (s.labels[idx[t]] == 1) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(s.positives());
  const double n = static_cast<double>(s.negatives());
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

struct ApResult {
  double ap = 0.0;
  bool no_positives = false;
};

// Average precision over the top ceil(k * N) items: the mean of precision@r
// over positive ranks r within the cut, normalized by
// min(total positives, cut size). With k = 1 this is standard AP.
inline ApResult average_precision_at_k_detailed(const ScoredSet& s, double k) {
  s.validate();
  if (!(k > 0.0 && k <= 1.0)) throw ConfigError("average_precision_at_k: k must lie in (0,1]");
  const std::size_t n = s.scores.size();
  const auto cut = static_cast<std::size_t>(std::ceil(k * static_cast<double>(n) - 1e-9));
  if (cut < 1) throw DataError("average_precision_at_k: k * N must be at least 1");
  const std::size_t total_pos = s.positives();
  if (total_pos == 0) return {0.0, true};
  const auto order = detail::rank_order(s.scores);
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < cut; ++r) {
    if (s.labels[order[r]] == 1) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return {sum / static_cast<double>(std::min(total_pos, cut)), false};
}

inline double average_precision_at_k(const ScoredSet& s, double k = 0.5) {
  return average_precision_at_k_detailed(s, k).ap;
}

inline double average_precision(const ScoredSet& s) { return average_precision_at_k(s, 1.0); }

// Largest TPR over thresholds t drawn from the observed scores (predict
// positive when score >= t) whose FPR is at most fp_rate.
inline double tp_at_fp(const ScoredSet& s, double fp_rate) {
  detail::require_both_classes(s, "tp_at_fp");
  if (!(fp_rate >= 0.0 && fp_rate <= 1.0)) throw ConfigError("tp_at_fp: fp_rate must lie in [0,1]");
  const auto order = detail::rank_order(s.scores);
  const double p = static_cast<double>(s.positives());
  const double n = static_cast<double>(s.negatives());
  double tp = 0.0, fp = 0.0, best = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) {
      (s.labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    if (fp / n <= fp_rate + 1e-12) best = std::max(best, tp / p);
    i = j;
  }
  return best;
}

struct CalibrationBin {
  double mean_confidence = 0.0;
  double fraction_positive = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
};

inline constexpr std::size_t kDefaultCalibrationBins = 20;

// Equal-width bins [i/B, (i+1)/B); the last bin is closed at 1.
inline CalibrationReport ece(std::span<const double> probs, std::span<const int> labels,
                             std::size_t n_bins = kDefaultCalibrationBins) {
  if (probs.size() != labels.size()) throw DataError("ece: probabilities and labels differ in length");
  if (n_bins == 0) throw ConfigError("ece: need at least one bin");
  CalibrationReport rep;
  rep.bins.resize(n_bins);
  std::vector<double> conf_sum(n_bins, 0.0), pos_sum(n_bins, 0.0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    if (!(p >= 0.0 && p <= 1.0)) throw DataError("ece: probability outside [0,1]");
    const auto b = std::min(n_bins - 1, static_cast<std::size_t>(std::floor(p * static_cast<double>(n_bins))));
    conf_sum[b] += p;
    pos_sum[b] += labels[i];
    ++rep.bins[b].count;
  }
  const double total = static_cast<double>(probs.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = rep.bins[b];
    if (bin.count == 0) continue;
    const double c = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / c;
    bin.fraction_positive = pos_sum[b] / c;
    rep.ece += (c / total) * std::abs(bin.mean_confidence - bin.fraction_positive);
  }
  return rep;
}

}  // namespace knowgraph::eval
