#pragma once

#include <zlib.h>

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/auth_event.hpp"

namespace knowgraph::graphstore {

// Calls `on_line(text, line_no)` for every line of a plain or gzip file (zlib
// reads both transparently). Trailing CR is stripped; blank lines are skipped.
// Returning false from the callback stops reading.
inline void for_each_line(const std::string& path,
                          const std::function<bool(std::string_view, std::size_t)>& on_line) {
  std::unique_ptr<gzFile_s, decltype(&gzclose)> file(gzopen(path.c_str(), "rb"), &gzclose);
  if (!file) throw DataError("cannot open " + path);
  gzbuffer(file.get(), 1 << 17);
  std::string pending;
  std::vector<char> buf(1 << 16);
  std::size_t line_no = 0;
  auto emit = [&](std::string_view line) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return true;
    return on_line(line, line_no);
  };
  while (true) {
    const int n = gzread(file.get(), buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      int code = 0;
      throw DataError(path + ": " + gzerror(file.get(), &code));
    }
    if (n == 0) break;
    pending.append(buf.data(), static_cast<std::size_t>(n));
    std::size_t start = 0;
    for (std::size_t nl; (nl = pending.find('\n', start)) != std::string::npos; start = nl + 1) {
      if (!emit(std::string_view(pending).substr(start, nl - start))) return;
    }
    pending.erase(0, start);
  }
  if (!pending.empty()) emit(pending);
}

// Reads at most `limit` auth events (0 = no limit).
inline std::vector<AuthEvent> read_auth_file(const std::string& path, std::size_t limit = 0) {
  std::vector<AuthEvent> events;
  for_each_line(path, [&](std::string_view line, std::size_t no) {
    events.push_back(parse_auth_line(line, no));
    return limit == 0 || events.size() < limit;
  });
  return events;
}

inline std::vector<RedteamEvent> read_redteam_file(const std::string& path) {
  std::vector<RedteamEvent> events;
  for_each_line(path, [&](std::string_view line, std::size_t no) {
    events.push_back(parse_redteam_line(line, no));
    return true;
  });
  return events;
}

}  // namespace knowgraph::graphstore
