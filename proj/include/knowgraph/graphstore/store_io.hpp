#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/snapshot.hpp"

namespace knowgraph::graphstore {

namespace fs = std::filesystem;

// Snapshot store layout:
//   manifest.json                 window list and totals
//   nodes.csv                     id,name
//   window_<index>.csv            one JSON header line, then the edge table
//                                 src,dst,auth_is_ntlm,event_count,label,first_time,last_time
// Node ids in edge tables refer to nodes.csv.

inline std::string window_file_name(std::int64_t window_index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "window_%06lld.csv", static_cast<long long>(window_index));
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_store(const fs::path& dir, const std::vector<GraphSnapshot>& snapshots) {
  fs::create_directories(dir);
  const std::int64_t window_secs = snapshots.empty() ? kDefaultWindowSecs : snapshots.front().t_end - snapshots.front().t_start;
  const std::size_t n = snapshots.empty() ? 0 : snapshots.front().num_nodes();

  nlohmann::ordered_json manifest;
  manifest["format"] = "knowgraph-snapshots/1";
  manifest["window_secs"] = window_secs;
  manifest["num_nodes"] = n;
  manifest["window_edges"] = total_edges(snapshots);
  manifest["malicious_edges"] = total_malicious(snapshots);
  manifest["windows"] = nlohmann::json::array();
  for (const auto& s : snapshots) manifest["windows"].push_back(s.window_index);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string nodes = "id,name\n";
  if (!snapshots.empty()) {
    const auto& names = snapshots.front().nodes->names();
    for (std::size_t i = 0; i < names.size(); ++i) nodes += std::to_string(i) + "," + names[i] + "\n";
  }
  write_text(dir / "nodes.csv", nodes);

  for (const auto& s : snapshots) {
    nlohmann::ordered_json header;
    header["window_index"] = s.window_index;
    header["t_start"] = s.t_start;
    header["t_end"] = s.t_end;
    header["N"] = s.num_nodes();
    header["E"] = s.num_edges();
    std::string text = header.dump() + "\n";
    text += "src,dst,auth_is_ntlm,event_count,label,first_time,last_time\n";
    for (std::size_t i = 0; i < s.edges.size(); ++i) {
      const auto& e = s.edges[i];
      text += std::to_string(e.src) + "," + std::to_string(e.dst) + "," + (e.attrs.auth_is_ntlm ? "1" : "0") + "," +
              std::to_string(e.attrs.event_count) + "," + label_name(s.labels[i]) + "," +
              std::to_string(e.attrs.first_time) + "," + std::to_string(e.attrs.last_time) + "\n";
    }
    write_text(dir / window_file_name(s.window_index), text);
  }
}

inline EdgeLabel parse_label(const std::string& s, std::size_t line) {
  if (s == "benign") return EdgeLabel::kBenign;
  if (s == "malicious") return EdgeLabel::kMalicious;
  if (s == "unlabeled") return EdgeLabel::kUnlabeled;
  throw ParseError(line, "unknown label '" + s + "'");
}

inline std::vector<GraphSnapshot> read_store(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw DataError("not a snapshot store: " + dir.string());
  const auto manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));

  auto index = std::make_shared<NodeIndex>();
  {
    std::istringstream in(read_text(dir / "nodes.csv"));
    std::string line;
    std::getline(in, line);
    std::size_t no = 1;
    while (std::getline(in, line)) {
      ++no;
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw ParseError(no, "nodes.csv: expected id,name");
      const NodeId id = index->intern(line.substr(comma + 1));
      if (std::to_string(id) != line.substr(0, comma)) throw ParseError(no, "nodes.csv: ids must be dense and ordered");
    }
  }
  std::shared_ptr<const NodeIndex> frozen = index;

  std::vector<GraphSnapshot> out;
  for (const auto& w : manifest.at("windows")) {
    const auto window_index = w.get<std::int64_t>();
    std::istringstream in(read_text(dir / window_file_name(window_index)));
    std::string line;
    std::getline(in, line);
    const auto header = nlohmann::json::parse(line);
    GraphSnapshot s;
    s.window_index = header.at("window_index").get<std::int64_t>();
    s.t_start = header.at("t_start").get<std::int64_t>();
    s.t_end = header.at("t_end").get<std::int64_t>();
    s.nodes = frozen;
    std::getline(in, line);  // column header
    std::size_t no = 2;
    while (std::getline(in, line)) {
      ++no;
      const auto f = detail::split_csv(line);
      if (f.size() != 7) throw ParseError(no, "edge table: expected 7 columns");
      Edge e;
      e.src = static_cast<NodeId>(std::stoul(std::string(f[0])));
      e.dst = static_cast<NodeId>(std::stoul(std::string(f[1])));
      if (e.src >= frozen->size() || e.dst >= frozen->size()) throw ParseError(no, "edge endpoint out of range");
      e.attrs.auth_is_ntlm = f[2] == "1";
      e.attrs.event_count = std::stoll(std::string(f[3]));
      e.attrs.first_time = std::stoll(std::string(f[5]));
      e.attrs.last_time = std::stoll(std::string(f[6]));
      s.labels.push_back(parse_label(std::string(f[4]), no));
      s.edges.push_back(std::move(e));
    }
    if (s.edges.size() != header.at("E").get<std::size_t>()) {
      throw DataError(window_file_name(window_index) + ": edge count disagrees with header");
    }
    out.push_back(std::move(s));
  }
  return out;
}

// FNV-1a over (file name, contents) of every regular file, in name order.
inline std::uint64_t store_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const std::string& bytes) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& f : files) {
    mix(f.filename().string());
    mix(read_text(f));
  }
  return h;
}

}  // namespace knowgraph::graphstore
