#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <queue>
#include <tuple>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/snapshot.hpp"

namespace knowgraph::graphstore {

// Undirected neighbor lists (CSR) of a snapshot; parallel and reciprocal edges
// collapse, self-loops are dropped.
class UndirectedAdjacency {
 public:
  UndirectedAdjacency() = default;

  explicit UndirectedAdjacency(const GraphSnapshot& g) : offsets_(g.num_nodes() + 1, 0) {
    std::vector<std::pair<NodeId, NodeId>> pairs;
    pairs.reserve(2 * g.edges.size());
    for (const auto& e : g.edges) {
      if (e.src == e.dst) continue;
      pairs.emplace_back(e.src, e.dst);
      pairs.emplace_back(e.dst, e.src);
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    for (const auto& [u, v] : pairs) ++offsets_[u + 1];
    for (std::size_t i = 1; i < offsets_.size(); ++i) offsets_[i] += offsets_[i - 1];
    targets_.reserve(pairs.size());
    for (const auto& p : pairs) targets_.push_back(p.second);
  }

  std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {targets_.data() + offsets_[u], offsets_[u + 1] - offsets_[u]};
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> targets_;
};

struct DistanceLabel {
  std::uint32_t d_src = 0;
  std::uint32_t d_dst = 0;

  friend bool operator==(const DistanceLabel&, const DistanceLabel&) = default;
};

struct EnclosingSubgraph {
  NodeId center_src = 0;
  NodeId center_dst = 0;
  std::uint32_t k = 0;
  std::vector<NodeId> nodes;                                   // local index -> original id
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // local, undirected, i < j, center removed
  std::vector<DistanceLabel> dist_labels;
  EdgeLabel label = EdgeLabel::kUnlabeled;

  std::size_t num_nodes() const noexcept { return nodes.size(); }
};

namespace detail {

// Hop distances from `root` up to `k`, never crossing the (a,b) pair.
// Unreached nodes keep the value k + 1.
inline void bounded_bfs(const UndirectedAdjacency& adj, NodeId root, NodeId a, NodeId b, std::uint32_t k,
                        std::vector<std::uint32_t>& dist, std::vector<NodeId>& touched) {
  std::queue<NodeId> q;
  dist[root] = 0;
  touched.push_back(root);
  q.push(root);
  while (!q.empty()) {
    const NodeId u = q.front();
    q.pop();
    if (dist[u] == k) continue;
    for (NodeId v : adj.neighbors(u)) {
      if ((u == a && v == b) || (u == b && v == a)) continue;
      if (dist[v] <= k) continue;
      dist[v] = dist[u] + 1;
      touched.push_back(v);
      q.push(v);
    }
  }
}

}  // namespace detail

// Nodes within k undirected hops of either endpoint. Distance labels are
// measured with the center pair removed; anything farther than k (or
// unreachable) is recorded as k + 1. Local order is (d_src, d_dst, original id).
inline EnclosingSubgraph extract_enclosing_subgraph(const GraphSnapshot& g, const UndirectedAdjacency& adj,
                                                    NodeId src, NodeId dst, std::uint32_t k) {
  if (k < 1) throw ConfigError("extract_enclosing_subgraph: k must be >= 1");
  if (src >= g.num_nodes() || dst >= g.num_nodes()) {
    throw DataError("extract_enclosing_subgraph: endpoint not in snapshot");
  }
  const std::size_t n = adj.num_nodes();
  const std::uint32_t far = k + 1;
  std::vector<std::uint32_t> from_src(n, far), from_dst(n, far);
  std::vector<NodeId> touched;
  detail::bounded_bfs(adj, src, src, dst, k, from_src, touched);
  detail::bounded_bfs(adj, dst, src, dst, k, from_dst, touched);
  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

  std::vector<std::tuple<std::uint32_t, std::uint32_t, NodeId>> order;
  order.reserve(touched.size());
  for (NodeId v : touched) order.emplace_back(from_src[v], from_dst[v], v);
  std::sort(order.begin(), order.end());

  EnclosingSubgraph sub;
  sub.center_src = src;
  sub.center_dst = dst;
  sub.k = k;
  std::vector<std::uint32_t> local(n, std::numeric_limits<std::uint32_t>::max());
  for (const auto& [ds, dd, v] : order) {
    local[v] = static_cast<std::uint32_t>(sub.nodes.size());
    sub.nodes.push_back(v);
    sub.dist_labels.push_back({ds, dd});
  }
  for (std::uint32_t i = 0; i < sub.nodes.size(); ++i) {
    const NodeId u = sub.nodes[i];
    for (NodeId v : adj.neighbors(u)) {
      const std::uint32_t j = local[v];
      if (j == std::numeric_limits<std::uint32_t>::max() || j <= i) continue;
      if ((u == src && v == dst) || (u == dst && v == src)) continue;
      sub.edges.emplace_back(i, j);
    }
  }
  if (const auto e = g.find_edge(src, dst)) sub.label = g.labels[*e];
  return sub;
}

inline EnclosingSubgraph extract_enclosing_subgraph(const GraphSnapshot& g, NodeId src, NodeId dst,
                                                    std::uint32_t k) {
  return extract_enclosing_subgraph(g, UndirectedAdjacency(g), src, dst, k);
}

}  // namespace knowgraph::graphstore
