#pragma once

#include <cstdint>
#include <random>
#include <unordered_set>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/snapshot.hpp"

namespace knowgraph::learning {

using NodePair = std::pair<graphstore::NodeId, graphstore::NodeId>;

inline std::uint64_t pair_key(graphstore::NodeId a, graphstore::NodeId b) {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

// Undirected membership test for a snapshot's edges.
class EdgeSet {
 public:
  EdgeSet() = default;
  explicit EdgeSet(const graphstore::GraphSnapshot& g) : num_nodes_(g.num_nodes()), num_edges_(g.edges.size()) {
    present_.reserve(2 * g.edges.size());
    for (const auto& e : g.edges) {
      present_.insert(pair_key(e.src, e.dst));
      present_.insert(pair_key(e.dst, e.src));
    }
  }

  bool connected(graphstore::NodeId u, graphstore::NodeId v) const { return present_.contains(pair_key(u, v)); }
  std::size_t num_nodes() const noexcept { return num_nodes_; }

 private:
  std::size_t num_nodes_ = 0;
  std::size_t num_edges_ = 0;
  std::unordered_set<std::uint64_t> present_;
};

// Uniform (src, dst) pairs with src != dst and no edge between them in either
// direction, by rejection. Fails after a bounded number of rejections.
inline std::vector<NodePair> negative_sample(const EdgeSet& edges, std::size_t count, std::mt19937_64& rng) {
  std::vector<NodePair> out;
  if (count == 0) return out;
  const std::uint64_t n = edges.num_nodes();
  if (n < 2) throw DataError("negative_sample: need at least two nodes");
  std::uniform_int_distribution<std::uint64_t> node(0, n - 1);
  const std::size_t budget = 100 * count + 1000;
  std::size_t tries = 0;
  out.reserve(count);
  while (out.size() < count) {
    if (++tries > budget) throw DataError("negative_sample: no non-edges found (graph complete?)");
    const auto u = static_cast<graphstore::NodeId>(node(rng));
    const auto v = static_cast<graphstore::NodeId>(node(rng));
    if (u == v || edges.connected(u, v)) continue;
    out.emplace_back(u, v);
  }
  return out;
}

inline std::vector<NodePair> negative_sample(const graphstore::GraphSnapshot& g, std::size_t count, std::mt19937_64& rng) {
  if (count == 0) return {};
  return negative_sample(EdgeSet(g), count, rng);
}

}  // namespace knowgraph::learning
