#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "knowgraph/error.hpp"
#include "knowgraph/graphstore/auth_event.hpp"

namespace knowgraph::graphstore {

// Synthetic authentication traffic with planted communities, a lateral
// movement campaign and a late-period distribution shift.
//
// Benign traffic: active workstations log on to a few habitual servers and
// peers of their own community, occasionally to other servers of the community,
// and rarely across communities. Workstations switch between active and idle.
// The attack starts at attack_start_fraction of the timeline; each malicious
// event goes from an already compromised host to a fresh workstation, mostly in
// another community, and uses NTLM with p_ntlm_given_malicious.
// Drift ramps linearly from drift_start_fraction to the end of the timeline,
// up to shift_strength: it raises the workstation churn rate and the
// cross-community rate of benign logons.
struct SynthConfig {
  std::int64_t n_computers = 500;
  std::int64_t n_windows = 100;
  std::int64_t window_secs = 1800;
  double benign_rate = 2000.0;
  double malicious_rate = 0.25;
  double p_ntlm_given_malicious = 0.9;
  double p_ntlm_given_benign = 0.3;
  std::int64_t community_count = 10;
  double shift_strength = 1.0;
  std::uint64_t seed = 0;

  double attack_start_fraction = 0.5;
  double drift_start_fraction = 0.6;
  double cross_rate = 0.02;         // benign cross-community probability before drift
  double cross_rate_drift = 0.10;   // added at full drift (times shift_strength)
  double churn_rate = 0.05;         // per-window probability a workstation redraws its state
  double churn_rate_drift = 0.50;   // added at full drift (times shift_strength)
  double active_fraction = 0.6;

  void validate() const {
    if (n_computers < 2) throw ConfigError("synth: n_computers must be >= 2");
    if (n_windows < 1 || window_secs < 1) throw ConfigError("synth: n_windows and window_secs must be positive");
    if (benign_rate < 0 || malicious_rate < 0) throw ConfigError("synth: rates must be >= 0");
    for (double p : {p_ntlm_given_malicious, p_ntlm_given_benign, attack_start_fraction, drift_start_fraction,
                     cross_rate, churn_rate, active_fraction}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probabilities must lie in [0,1]");
    }
    if (shift_strength < 0) throw ConfigError("synth: shift_strength must be >= 0");
    if (community_count < 1 || community_count > n_computers) throw ConfigError("synth: bad community_count");
  }
};

struct SynthData {
  std::vector<AuthEvent> events;
  std::vector<RedteamEvent> redteam;
};

namespace detail {

struct SynthWorld {
  std::vector<std::int64_t> community;
  std::vector<std::vector<std::int64_t>> members;
  std::vector<std::vector<std::int64_t>> servers;
  std::vector<std::vector<std::int64_t>> workstations;
  std::vector<std::vector<std::int64_t>> habits;
  std::vector<double> ntlm_propensity;
  std::vector<bool> is_server;
};

inline std::string computer_name(std::int64_t id) { return "C" + std::to_string(id); }
inline std::string user_name(std::int64_t id) { return "U" + std::to_string(id) + "@DOM1"; }

}  // namespace detail

inline SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto pick = [&rng](const std::vector<std::int64_t>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };

  const std::int64_t n = cfg.n_computers;
  const std::int64_t c = cfg.community_count;
  detail::SynthWorld world;
  world.community.resize(static_cast<std::size_t>(n));
  world.members.resize(static_cast<std::size_t>(c));
  world.servers.resize(static_cast<std::size_t>(c));
  world.workstations.resize(static_cast<std::size_t>(c));
  world.is_server.assign(static_cast<std::size_t>(n), false);
  for (std::int64_t u = 0; u < n; ++u) {
    const std::int64_t k = u * c / n;
    world.community[static_cast<std::size_t>(u)] = k;
    world.members[static_cast<std::size_t>(k)].push_back(u);
  }
  for (std::int64_t k = 0; k < c; ++k) {
    auto& m = world.members[static_cast<std::size_t>(k)];
    const std::size_t n_servers = std::max<std::size_t>(1, m.size() / 10);
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (i < n_servers || m.size() == 1) {
        world.servers[static_cast<std::size_t>(k)].push_back(m[i]);
        world.is_server[static_cast<std::size_t>(m[i])] = true;
      } else {
        world.workstations[static_cast<std::size_t>(k)].push_back(m[i]);
      }
    }
  }
  std::vector<std::int64_t> all_workstations;
  for (const auto& ws : world.workstations) all_workstations.insert(all_workstations.end(), ws.begin(), ws.end());
  if (all_workstations.empty()) {
    for (std::int64_t u = 0; u < n; ++u) all_workstations.push_back(u);
  }

  world.habits.resize(static_cast<std::size_t>(n));
  world.ntlm_propensity.resize(static_cast<std::size_t>(n));
  for (std::int64_t u = 0; u < n; ++u) {
    const auto k = static_cast<std::size_t>(world.community[static_cast<std::size_t>(u)]);
    auto& h = world.habits[static_cast<std::size_t>(u)];
    for (int i = 0; i < 3; ++i) h.push_back(pick(world.servers[k]));
    const auto& peers = world.members[k];
    for (int i = 0; i < 2 && peers.size() > 1; ++i) {
      std::int64_t p = u;
      while (p == u) p = pick(peers);
      h.push_back(p);
    }
    world.ntlm_propensity[static_cast<std::size_t>(u)] = std::min(1.0, 2.0 * cfg.p_ntlm_given_benign * unif(rng));
  }

  std::vector<bool> active(static_cast<std::size_t>(n), false);
  for (std::int64_t u : all_workstations) active[static_cast<std::size_t>(u)] = unif(rng) < cfg.active_fraction;

  const auto attack_start = static_cast<std::int64_t>(std::floor(cfg.attack_start_fraction * static_cast<double>(cfg.n_windows)));
  const auto drift_start = static_cast<std::int64_t>(std::floor(cfg.drift_start_fraction * static_cast<double>(cfg.n_windows)));
  const std::int64_t attack_windows = cfg.n_windows - attack_start;
  const auto total_malicious = static_cast<std::int64_t>(std::llround(cfg.malicious_rate * static_cast<double>(cfg.n_windows)));

  std::vector<std::int64_t> compromised;
  std::vector<bool> is_compromised(static_cast<std::size_t>(n), false);

  SynthData out;
  struct Stamped {
    AuthEvent ev;
    std::uint64_t order;
  };
  std::vector<Stamped> window_events;
  std::uint64_t order = 0;

  for (std::int64_t w = 0; w < cfg.n_windows; ++w) {
    const double drift =
        w < drift_start || cfg.n_windows == drift_start
            ? 0.0
            : cfg.shift_strength * static_cast<double>(w - drift_start + 1) / static_cast<double>(cfg.n_windows - drift_start);
    const double p_cross = std::min(1.0, cfg.cross_rate + cfg.cross_rate_drift * drift);
    const double p_churn = std::min(1.0, cfg.churn_rate + cfg.churn_rate_drift * drift);

    if (w > 0) {
      for (std::int64_t u : all_workstations)
        if (unif(rng) < p_churn) active[static_cast<std::size_t>(u)] = unif(rng) < cfg.active_fraction;
    }
    std::vector<std::int64_t> sources;
    for (std::int64_t u : all_workstations)
      if (active[static_cast<std::size_t>(u)]) sources.push_back(u);
    if (sources.empty()) sources = all_workstations;

    window_events.clear();
    std::uniform_int_distribution<std::int64_t> in_window(0, cfg.window_secs - 1);
    const std::int64_t t0 = w * cfg.window_secs;

    const auto n_benign = static_cast<std::int64_t>(std::floor(cfg.benign_rate * static_cast<double>(w + 1)) -
                                                    std::floor(cfg.benign_rate * static_cast<double>(w)));
    for (std::int64_t i = 0; i < n_benign; ++i) {
      const std::int64_t src = pick(sources);
      const auto k = static_cast<std::size_t>(world.community[static_cast<std::size_t>(src)]);
      std::int64_t dst = src;
      const double r = unif(rng);
      if (r < p_cross && c > 1) {
        std::int64_t other = static_cast<std::int64_t>(k);
        while (other == static_cast<std::int64_t>(k)) other = std::uniform_int_distribution<std::int64_t>(0, c - 1)(rng);
        dst = pick(world.members[static_cast<std::size_t>(other)]);
      } else if (r < p_cross + 0.85 * (1.0 - p_cross)) {
        dst = pick(world.habits[static_cast<std::size_t>(src)]);
      } else {
        dst = pick(world.servers[k]);
      }
      AuthEvent ev;
      ev.time = t0 + in_window(rng);
      ev.src_user = detail::user_name(src);
      ev.dst_user = ev.src_user;
      ev.src_computer = detail::computer_name(src);
      ev.dst_computer = detail::computer_name(dst);
      const bool ntlm = unif(rng) < world.ntlm_propensity[static_cast<std::size_t>(src)];
      ev.auth_type = ntlm ? AuthType{AuthKind::kNtlm, {}} : AuthType{AuthKind::kKerberos, {}};
      ev.logon_type = "Network";
      ev.orientation = "LogOn";
      ev.success = true;
      window_events.push_back({std::move(ev), order++});
    }

    if (w >= attack_start && total_malicious > 0) {
      const std::int64_t j = w - attack_start;
      auto ceil_div = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
      const std::int64_t n_mal =
          ceil_div((j + 1) * total_malicious, attack_windows) - ceil_div(j * total_malicious, attack_windows);
      if (compromised.empty() && n_mal > 0) {
        const std::int64_t patient_zero = pick(all_workstations);
        compromised.push_back(patient_zero);
        is_compromised[static_cast<std::size_t>(patient_zero)] = true;
      }
      for (std::int64_t i = 0; i < n_mal; ++i) {
        const std::int64_t src = pick(compromised);
        const auto k = world.community[static_cast<std::size_t>(src)];
        std::int64_t dst = src;
        for (int attempt = 0; attempt < 64 && (dst == src || is_compromised[static_cast<std::size_t>(dst)]); ++attempt) {
          const bool cross = c > 1 && unif(rng) < 0.8;
          std::int64_t target_comm = k;
          if (cross) {
            while (target_comm == k) target_comm = std::uniform_int_distribution<std::int64_t>(0, c - 1)(rng);
          }
          const auto& pool = world.workstations[static_cast<std::size_t>(target_comm)].empty()
                                 ? world.members[static_cast<std::size_t>(target_comm)]
                                 : world.workstations[static_cast<std::size_t>(target_comm)];
          dst = pick(pool);
        }
        if (dst == src) continue;
        if (!is_compromised[static_cast<std::size_t>(dst)]) {
          is_compromised[static_cast<std::size_t>(dst)] = true;
          compromised.push_back(dst);
        }
        AuthEvent ev;
        ev.time = t0 + in_window(rng);
        ev.src_user = detail::user_name(compromised.front());
        ev.dst_user = ev.src_user;
        ev.src_computer = detail::computer_name(src);
        ev.dst_computer = detail::computer_name(dst);
        const bool ntlm = unif(rng) < cfg.p_ntlm_given_malicious;
        ev.auth_type = ntlm ? AuthType{AuthKind::kNtlm, {}} : AuthType{AuthKind::kKerberos, {}};
        ev.logon_type = "Network";
        ev.orientation = "LogOn";
        ev.success = true;
        out.redteam.push_back({ev.time, ev.src_user, ev.src_computer, ev.dst_computer});
        window_events.push_back({std::move(ev), order++});
      }
    }

    std::sort(window_events.begin(), window_events.end(), [](const Stamped& a, const Stamped& b) {
      return a.ev.time != b.ev.time ? a.ev.time < b.ev.time : a.order < b.order;
    });
    for (auto& s : window_events) out.events.push_back(std::move(s.ev));
  }
  std::stable_sort(out.redteam.begin(), out.redteam.end(),
                   [](const RedteamEvent& a, const RedteamEvent& b) { return a.time < b.time; });
  return out;
}

}  // namespace knowgraph::graphstore
