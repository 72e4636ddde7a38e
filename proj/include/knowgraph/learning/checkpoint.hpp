#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/numerics/tensor.hpp"

namespace knowgraph::learning {

// Checkpoint file: one line of JSON (the caller's header plus a "params" list
// of {name, rows, cols}), a newline, then every parameter entry as a
// little-endian IEEE-754 double in header order.
struct Checkpoint {
  nlohmann::json header;
  ParamSet params;
};

namespace detail {

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
    return r;
  }
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, nlohmann::json header, const ParamSet& params) {
  header["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params) header["params"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << header.dump() << '\n';
  for (const auto& [name, t] : params) {
    for (double v : t.values()) {
      std::uint64_t bits = detail::to_little_endian(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  Checkpoint ck;
  try {
    ck.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint header: " + std::string(e.what()));
  }
  for (const auto& p : ck.header.at("params")) {
    Tensor t(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>());
    for (auto& v : t.values()) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!in) throw DataError("checkpoint truncated: " + path.string());
      v = std::bit_cast<double>(detail::to_little_endian(bits));
    }
    ck.params.emplace(p.at("name").get<std::string>(), std::move(t));
  }
  ck.header.erase("params");
  return ck;
}

}  // namespace knowgraph::learning
