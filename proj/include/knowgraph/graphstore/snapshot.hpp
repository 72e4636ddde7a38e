#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/auth_event.hpp"
#include "knowgraph/numerics/tensor.hpp"

namespace knowgraph::graphstore {

using NodeId = std::uint32_t;

enum class EdgeLabel : std::uint8_t { kBenign = 0, kMalicious = 1, kUnlabeled = 2 };

inline const char* label_name(EdgeLabel l) {
  switch (l) {
    case EdgeLabel::kBenign: return "benign";
    case EdgeLabel::kMalicious: return "malicious";
    case EdgeLabel::kUnlabeled: return "unlabeled";
  }
  return "unlabeled";
}

struct EdgeAttrs {
  bool auth_is_ntlm = false;
  std::int64_t event_count = 1;
  std::int64_t first_time = 0;
  std::int64_t last_time = 0;
  // Open slot for transaction-style attributes (gmv, price, seller_age, ...).
  std::map<std::string, double> numeric_attrs;

  friend bool operator==(const EdgeAttrs&, const EdgeAttrs&) = default;
};

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  EdgeAttrs attrs;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Dense name <-> id map. Ids are handed out in order of first appearance.
class NodeIndex {
 public:
  NodeId intern(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, static_cast<NodeId>(names_.size()));
    if (inserted) names_.push_back(name);
    return it->second;
  }

  std::optional<NodeId> find(const std::string& name) const {
    const auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& name(NodeId id) const { return names_.at(id); }
  std::size_t size() const noexcept { return names_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, NodeId> ids_;
};

// One deduplicated time window. Every snapshot built in one pass shares the
// node index, so node ids are comparable across windows and N is the size of
// that shared index. Edges are sorted by (src, dst).
struct GraphSnapshot {
  std::int64_t window_index = 0;
  std::int64_t t_start = 0;
  std::int64_t t_end = 0;
  std::shared_ptr<const NodeIndex> nodes;
  std::vector<Edge> edges;
  std::vector<EdgeLabel> labels;

  std::size_t num_nodes() const noexcept { return nodes ? nodes->size() : 0; }
  std::size_t num_edges() const noexcept { return edges.size(); }

  std::optional<std::size_t> find_edge(NodeId src, NodeId dst) const {
    const auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{src, dst},
                                     [](const Edge& e, const std::pair<NodeId, NodeId>& key) {
                                       return std::pair{e.src, e.dst} < key;
                                     });
    if (it == edges.end() || it->src != src || it->dst != dst) return std::nullopt;
    return static_cast<std::size_t>(it - edges.begin());
  }

  std::size_t malicious_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), EdgeLabel::kMalicious));
  }
};

inline constexpr std::int64_t kDefaultWindowSecs = 1800;
inline constexpr std::size_t kDegreeBuckets = 16;
inline constexpr std::size_t kNodeFeatureDim = 2 * kDegreeBuckets + 1;

inline std::size_t degree_bucket(std::size_t degree) {
  std::size_t b = 0;
  while (degree > 0 && b + 1 < kDegreeBuckets) {
    degree >>= 1;
    ++b;
  }
  return b;
}

// N x 33 node features: one-hot out-degree bucket, one-hot in-degree bucket,
// and the fraction of incident edges that used NTLM. Buckets are
// floor(log2(deg)) + 1 for deg > 0, capped at 15.
inline Tensor node_features(const GraphSnapshot& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::size_t> out_deg(n, 0), in_deg(n, 0), ntlm(n, 0);
  for (const auto& e : g.edges) {
    ++out_deg[e.src];
    ++in_deg[e.dst];
    if (e.attrs.auth_is_ntlm) {
      ++ntlm[e.src];
      ++ntlm[e.dst];
    }
  }
  Tensor x(n, kNodeFeatureDim);
  for (std::size_t v = 0; v < n; ++v) {
    x(v, degree_bucket(out_deg[v])) = 1.0;
    x(v, kDegreeBuckets + degree_bucket(in_deg[v])) = 1.0;
    const std::size_t total = out_deg[v] + in_deg[v];
    x(v, 2 * kDegreeBuckets) = total == 0 ? 0.0 : static_cast<double>(ntlm[v]) / static_cast<double>(total);
  }
  return x;
}

// Streaming window builder. Events must arrive in non-decreasing time order.
class SnapshotBuilder {
 public:
  explicit SnapshotBuilder(std::int64_t window_secs, std::shared_ptr<NodeIndex> index = nullptr)
      : window_secs_(window_secs), index_(index ? std::move(index) : std::make_shared<NodeIndex>()) {
    if (window_secs <= 0) throw ConfigError("window_secs must be positive");
  }

  void add(const AuthEvent& ev) {
    if (ev.time < last_time_) {
      throw DataError("events out of time order at t=" + std::to_string(ev.time));
    }
    last_time_ = ev.time;
    const std::int64_t w = ev.time / window_secs_;
    if (!open_ || w != current_window_) {
      flush();
      open_ = true;
      current_window_ = w;
    }
    const NodeId s = index_->intern(ev.src_computer);
    const NodeId d = index_->intern(ev.dst_computer);
    auto [it, inserted] = pending_.try_emplace(std::pair{s, d});
    Pending& p = it->second;
    if (inserted) {
      p.attrs.first_time = ev.time;
      p.attrs.event_count = 0;
    }
    p.attrs.event_count += 1;
    p.attrs.last_time = ev.time;
    p.attrs.auth_is_ntlm = p.attrs.auth_is_ntlm || ev.auth_type.is_ntlm();
    if (std::find(p.users.begin(), p.users.end(), ev.src_user) == p.users.end()) p.users.push_back(ev.src_user);
  }

  // Closes the open window and returns every snapshot built so far.
  std::vector<GraphSnapshot> finish() {
    flush();
    std::shared_ptr<const NodeIndex> frozen = index_;
    for (auto& s : done_) s.nodes = frozen;
    return std::move(done_);
  }

  std::shared_ptr<NodeIndex> index() const { return index_; }

 private:
  struct Pending {
    EdgeAttrs attrs;
    std::vector<std::string> users;
  };

  void flush() {
    if (!open_) return;
    GraphSnapshot snap;
    snap.window_index = current_window_;
    snap.t_start = current_window_ * window_secs_;
    snap.t_end = snap.t_start + window_secs_;
    snap.edges.reserve(pending_.size());
    for (auto& [key, p] : pending_) {
      p.attrs.numeric_attrs["distinct_src_users"] = static_cast<double>(p.users.size());
      snap.edges.push_back(Edge{key.first, key.second, std::move(p.attrs)});
    }
    snap.labels.assign(snap.edges.size(), EdgeLabel::kBenign);
    done_.push_back(std::move(snap));
    pending_.clear();
    open_ = false;
  }

  std::int64_t window_secs_;
  std::shared_ptr<NodeIndex> index_;
  std::map<std::pair<NodeId, NodeId>, Pending> pending_;
  std::vector<GraphSnapshot> done_;
  std::int64_t current_window_ = 0;
  std::int64_t last_time_ = 0;
  bool open_ = false;
};

// Event at time t lands in window floor(t / window_secs). Repeated
// (src_computer, dst_computer) pairs in a window merge into one edge; the edge
// is NTLM if any merged event was. Unsorted input is sorted (stably) first.
// Only windows that contain events are returned.
inline std::vector<GraphSnapshot> build_snapshots(std::span<const AuthEvent> events,
                                                  std::int64_t window_secs = kDefaultWindowSecs) {
  SnapshotBuilder builder(window_secs);
  const bool sorted = std::is_sorted(events.begin(), events.end(),
                                     [](const AuthEvent& a, const AuthEvent& b) { return a.time < b.time; });
  if (sorted) {
    for (const auto& ev : events) builder.add(ev);
  } else {
    std::vector<const AuthEvent*> order;
    order.reserve(events.size());
    for (const auto& ev : events) order.push_back(&ev);
    std::stable_sort(order.begin(), order.end(),
                     [](const AuthEvent* a, const AuthEvent* b) { return a->time < b->time; });
    for (const auto* ev : order) builder.add(*ev);
  }
  return builder.finish();
}

struct LabelStats {
  std::size_t malicious_edges = 0;
  std::size_t matched_events = 0;
  std::size_t dropped_events = 0;  // no window, unknown computer, or no such edge
};

// An edge becomes Malicious iff some redteam record names the same
// (src_computer, dst_computer) pair inside the edge's window. The user field is
// not consulted. All other edges are Benign.
inline LabelStats label_malicious_edges(std::vector<GraphSnapshot>& snapshots,
                                        std::span<const RedteamEvent> redteam) {
  LabelStats stats;
  for (auto& s : snapshots) s.labels.assign(s.edges.size(), EdgeLabel::kBenign);
  if (snapshots.empty()) {
    stats.dropped_events = redteam.size();
    return stats;
  }
  const std::int64_t window_secs = snapshots.front().t_end - snapshots.front().t_start;
  const NodeIndex& index = *snapshots.front().nodes;
  for (const auto& rt : redteam) {
    const std::int64_t w = rt.time / window_secs;
    const auto it = std::lower_bound(snapshots.begin(), snapshots.end(), w,
                                     [](const GraphSnapshot& s, std::int64_t key) { return s.window_index < key; });
    const auto src = index.find(rt.src_computer);
    const auto dst = index.find(rt.dst_computer);
    if (it == snapshots.end() || it->window_index != w || !src || !dst) {
      ++stats.dropped_events;
      continue;
    }
    const auto e = it->find_edge(*src, *dst);
    if (!e) {
      ++stats.dropped_events;
      continue;
    }
    ++stats.matched_events;
    it->labels[*e] = EdgeLabel::kMalicious;
  }
  for (const auto& s : snapshots) stats.malicious_edges += s.malicious_count();
  return stats;
}

// Re-expands a snapshot into one event per edge (the inverse of dedup up to
// event multiplicity). Used by the dedup idempotence property.
inline std::vector<AuthEvent> expand_snapshot(const GraphSnapshot& g) {
  std::vector<AuthEvent> out;
  out.reserve(g.edges.size());
  for (const auto& e : g.edges) {
    AuthEvent ev;
    ev.time = e.attrs.first_time;
    ev.src_user = "U@DOM";
    ev.dst_user = "U@DOM";
    ev.src_computer = g.nodes->name(e.src);
    ev.dst_computer = g.nodes->name(e.dst);
    ev.auth_type = e.attrs.auth_is_ntlm ? AuthType{AuthKind::kNtlm, {}} : AuthType{AuthKind::kKerberos, {}};
    ev.logon_type = "Network";
    ev.orientation = "LogOn";
    ev.success = true;
    out.push_back(std::move(ev));
  }
  std::stable_sort(out.begin(), out.end(), [](const AuthEvent& a, const AuthEvent& b) { return a.time < b.time; });
  return out;
}

inline std::size_t total_edges(std::span<const GraphSnapshot> snapshots) {
  std::size_t n = 0;
  for (const auto& s : snapshots) n += s.num_edges();
  return n;
}

inline std::size_t total_malicious(std::span<const GraphSnapshot> snapshots) {
  std::size_t n = 0;
  for (const auto& s : snapshots) n += s.malicious_count();
  return n;
}

}  // namespace knowgraph::graphstore
