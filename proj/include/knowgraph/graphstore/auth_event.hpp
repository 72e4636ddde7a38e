#pragma once

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "knowgraph/error.hpp"

namespace knowgraph::graphstore {

enum class AuthKind : std::uint8_t { kNtlm, kKerberos, kNegotiate, kOther };

struct AuthType {
  AuthKind kind = AuthKind::kOther;
  std::string other;  // raw text when kind == kOther ("?" included)

  bool is_ntlm() const noexcept { return kind == AuthKind::kNtlm; }

  static AuthType parse(std::string_view s) {
    if (s == "NTLM") return {AuthKind::kNtlm, {}};
    if (s == "Kerberos") return {AuthKind::kKerberos, {}};
    if (s == "Negotiate") return {AuthKind::kNegotiate, {}};
    return {AuthKind::kOther, std::string(s)};
  }

  std::string str() const {
    switch (kind) {
      case AuthKind::kNtlm: return "NTLM";
      case AuthKind::kKerberos: return "Kerberos";
      case AuthKind::kNegotiate: return "Negotiate";
      case AuthKind::kOther: return other;
    }
    return other;
  }

  friend bool operator==(const AuthType&, const AuthType&) = default;
};

struct AuthEvent {
  std::int64_t time = 0;
  std::string src_user;
  std::string dst_user;
  std::string src_computer;
  std::string dst_computer;
  AuthType auth_type;
  std::string logon_type;
  std::string orientation;
  bool success = false;

  friend bool operator==(const AuthEvent&, const AuthEvent&) = default;
};

struct RedteamEvent {
  std::int64_t time = 0;
  std::string user;
  std::string src_computer;
  std::string dst_computer;

  friend bool operator==(const RedteamEvent&, const RedteamEvent&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline std::int64_t parse_time(std::string_view s, std::size_t line_no) {
  std::int64_t t = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, t);
  if (s.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(line_no, "non-integer time '" + std::string(s) + "'");
  }
  if (t < 0) throw ParseError(line_no, "negative time " + std::to_string(t));
  return t;
}

}  // namespace detail

// Nine positional fields: time, src user@domain, dst user@domain, src computer,
// dst computer, auth type, logon type, orientation, Success/Fail.
inline AuthEvent parse_auth_line(std::string_view line, std::size_t line_no = 1) {
  const auto f = detail::split_csv(line);
  if (f.size() != 9) {
    throw ParseError(line_no, "expected 9 fields, got " + std::to_string(f.size()));
  }
  AuthEvent ev;
  ev.time = detail::parse_time(f[0], line_no);
  ev.src_user = f[1];
  ev.dst_user = f[2];
  ev.src_computer = f[3];
  ev.dst_computer = f[4];
  if (ev.src_computer.empty() || ev.dst_computer.empty()) {
    throw ParseError(line_no, "empty computer name");
  }
  ev.auth_type = AuthType::parse(f[5]);
  ev.logon_type = f[6];
  ev.orientation = f[7];
  ev.success = f[8] == "Success";
  return ev;
}

inline RedteamEvent parse_redteam_line(std::string_view line, std::size_t line_no = 1) {
  const auto f = detail::split_csv(line);
  if (f.size() != 4) {
    throw ParseError(line_no, "expected 4 fields, got " + std::to_string(f.size()));
  }
  return RedteamEvent{detail::parse_time(f[0], line_no), std::string(f[1]), std::string(f[2]),
                      std::string(f[3])};
}

inline std::string format_auth_line(const AuthEvent& ev) {
  return std::to_string(ev.time) + "," + ev.src_user + "," + ev.dst_user + "," + ev.src_computer + "," +
         ev.dst_computer + "," + ev.auth_type.str() + "," + ev.logon_type + "," + ev.orientation + "," +
         (ev.success ? "Success" : "Fail");
}

inline std::string format_redteam_line(const RedteamEvent& ev) {
  return std::to_string(ev.time) + "," + ev.user + "," + ev.src_computer + "," + ev.dst_computer;
}

}  // namespace knowgraph::graphstore
