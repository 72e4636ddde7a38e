#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

#include "json.hpp"
#include "knowgraph/error.hpp"
#include "knowgraph/eval/report.hpp"
#include "knowgraph/graphstore/split.hpp"
#include "knowgraph/graphstore/store_io.hpp"
#include "knowgraph/graphstore/synth.hpp"
#include "knowgraph/learning/encg.hpp"
#include "knowgraph/learning/trainer.hpp"
#include "knowgraph/reasoning/em.hpp"

namespace knowgraph::cli {

using nlohmann::json;
namespace fs = std::filesystem;

enum class DataSource : std::uint8_t { kSynth, kLanl, kStore };

struct DataConfig {
  DataSource source = DataSource::kSynth;
  graphstore::SynthConfig synth;
  std::string auth_path;
  std::string redteam_path;
  std::size_t max_events = 0;  // 0 = whole file
  std::string store;
};

struct SplitConfig {
  graphstore::SplitMode mode = graphstore::SplitMode::kInductive;
  double val_fraction = 0.05;
  // Leading test windows evaluated transductively; later ones are the
  // time-shifted inductive snapshots.
  std::size_t transductive_windows = 10;
  // Share of transductive-window edges whose labels train the reasoner.
  double reasoner_label_fraction = 0.5;
};

struct EnsembleConfig {
  bool enabled = true;
  double sigma = learning::kDefaultNoiseSigma;
  std::size_t replicas = learning::kDefaultReplicas;
};

struct ReasonerConfig {
  std::size_t hidden = 16;
  std::size_t mu_dim = 8;
  std::size_t infer_passes = 10;
  std::size_t max_train_examples = 0;  // 0 = no cap
  // Use the logged auth type as a hard observation instead of the auth
  // model's output.
  bool auth_observed = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::int64_t window_secs = graphstore::kDefaultWindowSecs;
  DataConfig data;
  SplitConfig split;
  learning::TrainHyper main;
  learning::TrainHyper auth;
  learning::EncgHyper encg;
  EnsembleConfig ensemble;
  std::string rules = "data/rules/lanl_rules.json";
  ReasonerConfig reasoner;
  reasoning::EmConfig em;
  eval::MetricOptions metrics;
  std::string out = "runs/default";
  fs::path base_dir;  // directory of the config file; relative paths resolve here as a fallback

  // Every model and stage seed derives from the one experiment seed.
  void propagate_seed() {
    main.seed = seed;
    auth.seed = seed;
    encg.seed = seed;
    em.seed = seed;
    data.synth.seed = seed;
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    if (path.is_absolute() || fs::exists(path) || base_dir.empty()) return path;
    const fs::path alt = base_dir / path;
    return fs::exists(alt) ? alt : path;
  }
};

namespace detail {

inline void check_keys(const json& j, const char* where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline graphstore::SynthConfig synth_from_json(const json& j) {
  check_keys(j, "data.synth",
             {"n_computers", "n_windows", "window_secs", "benign_rate", "malicious_rate", "p_ntlm_given_malicious",
              "p_ntlm_given_benign", "community_count", "shift_strength", "attack_start_fraction", "drift_start_fraction",
              "cross_rate", "cross_rate_drift", "churn_rate", "churn_rate_drift", "active_fraction"});
  graphstore::SynthConfig c;
  read(j, "n_computers", c.n_computers);
  read(j, "n_windows", c.n_windows);
  read(j, "window_secs", c.window_secs);
  read(j, "benign_rate", c.benign_rate);
  read(j, "malicious_rate", c.malicious_rate);
  read(j, "p_ntlm_given_malicious", c.p_ntlm_given_malicious);
  read(j, "p_ntlm_given_benign", c.p_ntlm_given_benign);
  read(j, "community_count", c.community_count);
  read(j, "shift_strength", c.shift_strength);
  read(j, "attack_start_fraction", c.attack_start_fraction);
  read(j, "drift_start_fraction", c.drift_start_fraction);
  read(j, "cross_rate", c.cross_rate);
  read(j, "cross_rate_drift", c.cross_rate_drift);
  read(j, "churn_rate", c.churn_rate);
  read(j, "churn_rate_drift", c.churn_rate_drift);
  read(j, "active_fraction", c.active_fraction);
  return c;
}

inline json synth_to_json(const graphstore::SynthConfig& c) {
  return {{"n_computers", c.n_computers},
          {"n_windows", c.n_windows},
          {"window_secs", c.window_secs},
          {"benign_rate", c.benign_rate},
          {"malicious_rate", c.malicious_rate},
          {"p_ntlm_given_malicious", c.p_ntlm_given_malicious},
          {"p_ntlm_given_benign", c.p_ntlm_given_benign},
          {"community_count", c.community_count},
          {"shift_strength", c.shift_strength},
          {"attack_start_fraction", c.attack_start_fraction},
          {"drift_start_fraction", c.drift_start_fraction},
          {"cross_rate", c.cross_rate},
          {"cross_rate_drift", c.cross_rate_drift},
          {"churn_rate", c.churn_rate},
          {"churn_rate_drift", c.churn_rate_drift},
          {"active_fraction", c.active_fraction}};
}

inline learning::TrainHyper hyper_from_json(const json& j, const char* where, learning::TrainHyper h) {
  check_keys(j, where, {"hidden", "lr", "epochs", "patience", "max_edges_per_window"});
  read(j, "hidden", h.hidden);
  read(j, "lr", h.lr);
  read(j, "epochs", h.epochs);
  read(j, "patience", h.patience);
  read(j, "max_edges_per_window", h.max_edges_per_window);
  return h;
}

inline json hyper_to_json(const learning::TrainHyper& h) {
  return {{"hidden", h.hidden}, {"lr", h.lr}, {"epochs", h.epochs}, {"patience", h.patience},
          {"max_edges_per_window", h.max_edges_per_window}};
}

inline learning::EncgHyper encg_from_json(const json& j, learning::EncgHyper h) {
  check_keys(j, "models.encg",
             {"k", "emb_dim", "hidden", "lr", "epochs", "patience", "batch_size", "samples_per_window", "val_samples_per_window"});
  read(j, "k", h.k);
  read(j, "emb_dim", h.emb_dim);
  read(j, "hidden", h.hidden);
  read(j, "lr", h.lr);
  read(j, "epochs", h.epochs);
  read(j, "patience", h.patience);
  read(j, "batch_size", h.batch_size);
  read(j, "samples_per_window", h.samples_per_window);
  read(j, "val_samples_per_window", h.val_samples_per_window);
  return h;
}

inline json encg_to_json(const learning::EncgHyper& h) {
  return {{"k", h.k},
          {"emb_dim", h.emb_dim},
          {"hidden", h.hidden},
          {"lr", h.lr},
          {"epochs", h.epochs},
          {"patience", h.patience},
          {"batch_size", h.batch_size},
          {"samples_per_window", h.samples_per_window},
          {"val_samples_per_window", h.val_samples_per_window}};
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::check_keys;
  using detail::read;
  check_keys(j, "config", {"seed", "window_secs", "data", "split", "models", "ensemble", "rules", "reasoner", "em", "metrics", "out"});
  if (!j.contains("seed")) throw ConfigError("config: 'seed' is mandatory");
  ExperimentConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  read(j, "window_secs", c.window_secs);
  if (c.window_secs < 1) throw ConfigError("config: window_secs must be positive");
  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"source", "synth", "auth_path", "redteam_path", "max_events", "store"});
    const std::string src = d.value("source", std::string("synth"));
    if (src == "synth")
      c.data.source = DataSource::kSynth;
    else if (src == "lanl")
      c.data.source = DataSource::kLanl;
    else if (src == "store")
      c.data.source = DataSource::kStore;
    else
      throw ConfigError("config: data.source must be synth, lanl or store");
    if (d.contains("synth")) c.data.synth = detail::synth_from_json(d.at("synth"));
    read(d, "auth_path", c.data.auth_path);
    read(d, "redteam_path", c.data.redteam_path);
    read(d, "max_events", c.data.max_events);
    read(d, "store", c.data.store);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    check_keys(s, "split", {"mode", "val_fraction", "transductive_windows", "reasoner_label_fraction"});
    const std::string mode = s.value("mode", std::string("inductive"));
    if (mode == "inductive")
      c.split.mode = graphstore::SplitMode::kInductive;
    else if (mode == "transductive")
      c.split.mode = graphstore::SplitMode::kTransductive;
    else
      throw ConfigError("config: split.mode must be transductive or inductive");
    read(s, "val_fraction", c.split.val_fraction);
    read(s, "transductive_windows", c.split.transductive_windows);
    read(s, "reasoner_label_fraction", c.split.reasoner_label_fraction);
    if (!(c.split.reasoner_label_fraction > 0.0 && c.split.reasoner_label_fraction < 1.0))
      throw ConfigError("config: split.reasoner_label_fraction must lie in (0,1)");
  }
  if (j.contains("models")) {
    const json& m = j.at("models");
    check_keys(m, "models", {"main", "auth", "encg"});
    if (m.contains("main")) c.main = detail::hyper_from_json(m.at("main"), "models.main", c.main);
    if (m.contains("auth")) c.auth = detail::hyper_from_json(m.at("auth"), "models.auth", c.auth);
    if (m.contains("encg")) c.encg = detail::encg_from_json(m.at("encg"), c.encg);
  }
  if (j.contains("ensemble")) {
    const json& e = j.at("ensemble");
    check_keys(e, "ensemble", {"enabled", "sigma", "replicas"});
    read(e, "enabled", c.ensemble.enabled);
    read(e, "sigma", c.ensemble.sigma);
    read(e, "replicas", c.ensemble.replicas);
    if (c.ensemble.sigma < 0.0 || c.ensemble.replicas < 1) throw ConfigError("config: ensemble needs sigma >= 0 and replicas >= 1");
  }
  read(j, "rules", c.rules);
  if (j.contains("reasoner")) {
    const json& r = j.at("reasoner");
    check_keys(r, "reasoner", {"hidden", "mu_dim", "infer_passes", "max_train_examples", "auth_observed"});
    read(r, "hidden", c.reasoner.hidden);
    read(r, "mu_dim", c.reasoner.mu_dim);
    read(r, "infer_passes", c.reasoner.infer_passes);
    read(r, "max_train_examples", c.reasoner.max_train_examples);
    read(r, "auth_observed", c.reasoner.auth_observed);
  }
  if (j.contains("em")) {
    const json& e = j.at("em");
    check_keys(e, "em", {"rounds", "eta", "noise_sigma", "n_noise_passes", "e_steps", "e_lr", "m_steps", "m_lr", "m_samples", "exact_limit"});
    read(e, "rounds", c.em.rounds);
    read(e, "eta", c.em.e.eta);
    read(e, "noise_sigma", c.em.e.noise_sigma);
    read(e, "n_noise_passes", c.em.e.n_noise_passes);
    read(e, "e_steps", c.em.e.steps);
    read(e, "e_lr", c.em.e.lr);
    read(e, "m_steps", c.em.m.steps);
    read(e, "m_lr", c.em.m.lr);
    read(e, "m_samples", c.em.m.samples);
    read(e, "exact_limit", c.em.m.exact_limit);
    if (c.em.e.eta < 0.0) throw ConfigError("config: em.eta must be >= 0");
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, "metrics", {"k", "fp_points", "bins"});
    read(m, "k", c.metrics.k);
    read(m, "fp_points", c.metrics.fp_points);
    read(m, "bins", c.metrics.bins);
    if (!(c.metrics.k > 0.0 && c.metrics.k <= 1.0)) throw ConfigError("config: metrics.k must lie in (0,1]");
  }
  read(j, "out", c.out);
  c.propagate_seed();
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json data{{"source", c.data.source == DataSource::kSynth  ? "synth"
                       : c.data.source == DataSource::kLanl ? "lanl"
                                                            : "store"}};
  if (c.data.source == DataSource::kSynth) data["synth"] = detail::synth_to_json(c.data.synth);
  if (c.data.source == DataSource::kLanl) {
    data["auth_path"] = c.data.auth_path;
    data["redteam_path"] = c.data.redteam_path;
    data["max_events"] = c.data.max_events;
  }
  if (c.data.source == DataSource::kStore) data["store"] = c.data.store;
  return {{"seed", c.seed},
          {"window_secs", c.window_secs},
          {"data", data},
          {"split",
           {{"mode", c.split.mode == graphstore::SplitMode::kInductive ? "inductive" : "transductive"},
            {"val_fraction", c.split.val_fraction},
            {"transductive_windows", c.split.transductive_windows},
            {"reasoner_label_fraction", c.split.reasoner_label_fraction}}},
          {"models", {{"main", detail::hyper_to_json(c.main)}, {"auth", detail::hyper_to_json(c.auth)}, {"encg", detail::encg_to_json(c.encg)}}},
          {"ensemble", {{"enabled", c.ensemble.enabled}, {"sigma", c.ensemble.sigma}, {"replicas", c.ensemble.replicas}}},
          {"rules", c.rules},
          {"reasoner",
           {{"hidden", c.reasoner.hidden},
            {"mu_dim", c.reasoner.mu_dim},
            {"infer_passes", c.reasoner.infer_passes},
            {"max_train_examples", c.reasoner.max_train_examples},
            {"auth_observed", c.reasoner.auth_observed}}},
          {"em",
           {{"rounds", c.em.rounds},
            {"eta", c.em.e.eta},
            {"noise_sigma", c.em.e.noise_sigma},
            {"n_noise_passes", c.em.e.n_noise_passes},
            {"e_steps", c.em.e.steps},
            {"e_lr", c.em.e.lr},
            {"m_steps", c.em.m.steps},
            {"m_lr", c.em.m.lr},
            {"m_samples", c.em.m.samples},
            {"exact_limit", c.em.m.exact_limit}}},
          {"metrics", {{"k", c.metrics.k}, {"fp_points", c.metrics.fp_points}, {"bins", c.metrics.bins}}},
          {"out", c.out}};
}

inline ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(graphstore::read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c;
  try {
    c = config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.base_dir = path.parent_path();
  return c;
}

}  // namespace knowgraph::cli
