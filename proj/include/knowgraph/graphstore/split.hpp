#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/snapshot.hpp"

namespace knowgraph::graphstore {

enum class SplitMode : std::uint8_t { kTransductive, kInductive };

// Positions into the snapshot list, not window indices.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  SplitMode mode = SplitMode::kTransductive;
  // Inductive only: window_index(test[i]) - window_index(test[0]).
  std::vector<std::int64_t> test_offsets;
};

// Everything before the window of the first malicious edge is pre-attack; its
// last ceil(val_fraction * n) windows are validation, the rest training. All
// windows from the first attack window on are test.
inline DatasetSplit make_split(std::span<const GraphSnapshot> snapshots, SplitMode mode,
                               double val_fraction = 0.05) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0,1)");
  std::size_t boundary = snapshots.size();
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i].malicious_count() > 0) {
      boundary = i;
      break;
    }
  }
  if (boundary == snapshots.size()) throw DataError("no attack boundary");
  if (boundary == 0) throw DataError("no attack boundary: first window already contains malicious edges");

  const auto n_val = static_cast<std::size_t>(std::ceil(val_fraction * static_cast<double>(boundary) - 1e-9));
  if (n_val >= boundary) throw DataError("no training windows left before the attack boundary");

  DatasetSplit split;
  split.mode = mode;
  for (std::size_t i = 0; i < boundary - n_val; ++i) split.train.push_back(i);
  for (std::size_t i = boundary - n_val; i < boundary; ++i) split.val.push_back(i);
  for (std::size_t i = boundary; i < snapshots.size(); ++i) split.test.push_back(i);
  if (mode == SplitMode::kInductive) {
    for (std::size_t i : split.test)
      split.test_offsets.push_back(snapshots[i].window_index - snapshots[boundary].window_index);
  }
  return split;
}

}  // namespace knowgraph::graphstore
