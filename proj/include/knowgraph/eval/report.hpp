#pragma once

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/eval/metrics.hpp"

namespace knowgraph::eval {

struct MetricOptions {
  double k = 0.5;
  std::vector<double> fp_points{0.005, 0.01, 0.02};
  std::size_t bins = kDefaultCalibrationBins;
};

inline std::string fp_key(double fp) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", fp);
  return buf;
}

// NaN becomes null so the report stays valid JSON.
inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

// Ranking metrics need both classes; when one is missing they are reported as
// null and the calibration block is still filled in.
inline nlohmann::json metric_report(const ScoredSet& s, const MetricOptions& opt = {}) {
  s.validate();
  const bool two_class = s.positives() > 0 && s.negatives() > 0;
  nlohmann::json j;
  j["n"] = s.labels.size();
  j["positives"] = s.positives();
  j["auc"] = two_class ? finite_or_null(roc_auc(s)) : nullptr;
  j["ap"] = s.positives() > 0 ? finite_or_null(average_precision(s)) : nlohmann::json(0.0);
  j["ap_k"] = s.positives() > 0 ? finite_or_null(average_precision_at_k(s, opt.k)) : nlohmann::json(0.0);
  j["k"] = opt.k;
  j["tp_at_fp"] = nlohmann::json::object();
  for (double fp : opt.fp_points) j["tp_at_fp"][fp_key(fp)] = two_class ? finite_or_null(tp_at_fp(s, fp)) : nullptr;
  bool probs = true;
  for (double v : s.scores) probs = probs && v >= 0.0 && v <= 1.0;
  if (probs) {
    const auto cal = ece(s.scores, s.labels, opt.bins);
    j["ece"] = cal.ece;
    j["bins"] = nlohmann::json::array();
    for (const auto& b : cal.bins)
      j["bins"].push_back({{"mean_confidence", b.mean_confidence}, {"fraction_positive", b.fraction_positive}, {"count", b.count}});
  } else {
    j["ece"] = nullptr;
    j["bins"] = nlohmann::json::array();
  }
  return j;
}

inline std::string calibration_csv(const CalibrationReport& rep) {
  std::ostringstream os;
  os << "bin,lower,upper,mean_confidence,fraction_positive,count\n";
  const double n = static_cast<double>(rep.bins.size());
  char buf[160];
  for (std::size_t b = 0; b < rep.bins.size(); ++b) {
    const auto& bin = rep.bins[b];
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g,%zu\n", b, static_cast<double>(b) / n,
                  static_cast<double>(b + 1) / n, bin.mean_confidence, bin.fraction_positive, bin.count);
    os << buf;
  }
  return os.str();
}

}  // namespace knowgraph::eval
