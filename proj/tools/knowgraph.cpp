// knowgraph command line: ingest, synth, train, reason, eval, report.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "knowgraph/cli/pipeline.hpp"

namespace fs = std::filesystem;
using namespace knowgraph;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = std::max(1U, std::thread::hardware_concurrency());
  std::string out;
};

cli::ExperimentConfig experiment_config(const Globals& g) {
  cli::ExperimentConfig cfg;
  if (!g.config.empty()) {
    if (!fs::exists(g.config)) throw ConfigError("config file not found: " + g.config);
    cfg = cli::load_config(g.config);
  }
  if (g.seed) cfg.seed = *g.seed;
  cfg.propagate_seed();
  return cfg;
}

fs::path output_dir(const Globals& g, const cli::ExperimentConfig& cfg) {
  if (const char* env = std::getenv("KNOWGRAPH_OUT"); env && *env) return env;
  if (!g.out.empty()) return g.out;
  return cfg.out;
}

void write_json(const fs::path& path, const json& j) { graphstore::write_text(path, j.dump(2) + "\n"); }

void print_summary(const std::vector<graphstore::GraphSnapshot>& snaps) {
  std::cout << cli::summary_line(cli::store_summary(snaps)) << "\n";
}

// Store from --store, else <out>/store, else whatever the config describes.
cli::Dataset dataset_for(const std::string& store, const fs::path& out, const cli::ExperimentConfig& cfg) {
  cli::Dataset d;
  if (!store.empty()) {
    d.snapshots = graphstore::read_store(store);
  } else if (fs::exists(out / "store")) {
    d.snapshots = graphstore::read_store(out / "store");
  } else {
    d = cli::load_dataset(cfg);
  }
  return d;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
  std::string auth, redteam;
  std::int64_t window_secs = graphstore::kDefaultWindowSecs;
  std::size_t max_events = 0;
};

int cmd_ingest(const Globals& g, const IngestArgs& a) {
  cli::ExperimentConfig cfg;
  if (!g.config.empty()) cfg = experiment_config(g);
  const fs::path out = output_dir(g, cfg);
  auto events = graphstore::read_auth_file(a.auth, a.max_events);
  std::vector<graphstore::RedteamEvent> redteam;
  if (!a.redteam.empty()) redteam = graphstore::read_redteam_file(a.redteam);
  const auto data = cli::dataset_from_events(std::move(events), redteam, a.window_secs);
  graphstore::write_store(out / "store", data.snapshots);
  print_summary(data.snapshots);
  return 0;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const Globals& g, std::optional<double> malicious_rate) {
  auto cfg = experiment_config(g);
  if (malicious_rate) cfg.data.synth.malicious_rate = *malicious_rate;
  cfg.data.source = cli::DataSource::kSynth;
  const fs::path out = output_dir(g, cfg);
  const auto data = cli::load_dataset(cfg);
  // Surface a store that cannot be split before anything is written.
  (void)graphstore::make_split(data.snapshots, cfg.split.mode, cfg.split.val_fraction);
  graphstore::write_store(out / "store", data.snapshots);
  print_summary(data.snapshots);
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string store, models;
  std::optional<double> sigma;
  std::optional<std::size_t> replicas;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  auto cfg = experiment_config(g);
  if (a.sigma) cfg.ensemble.sigma = *a.sigma;
  if (a.replicas) cfg.ensemble.replicas = *a.replicas;
  const bool ensembles = cfg.ensemble.enabled || a.sigma || a.replicas;
  const fs::path out = output_dir(g, cfg);
  const auto data = dataset_for(a.store, out, cfg);
  const auto split = graphstore::make_split(data.snapshots, cfg.split.mode, cfg.split.val_fraction);
  const unsigned mask = cli::parse_model_list(a.models);
  cli::Stopwatch clock;
  const auto models = cli::train_models(data.snapshots, split, cfg, mask, g.jobs);
  const double secs = clock.lap();
  cli::save_models(out / "checkpoints", models, cfg, ensembles);
  json rep{{"config", cli::config_to_json(cfg)},
           {"data", cli::store_summary(data.snapshots)},
           {"models", cli::models_json(models)},
           {"ensemble", {{"written", ensembles}, {"sigma", cfg.ensemble.sigma}, {"replicas", ensembles ? cfg.ensemble.replicas : 0}}}};
  cli::finish_report(rep, json{{"train", secs}});
  write_json(out / "train_report.json", rep);
  for (const auto& [name, m] : rep["models"].items())
    std::cout << name << ": val_auc " << m.value("best_val_auc", json(nullptr)).dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- reason

struct ReasonArgs {
  std::string store, checkpoints, rules, model_outputs, labels;
  std::optional<double> eta;
  bool pcs = false;
  bool emit_scores = false;
  bool auth_observed = false;
};

int reason_from_csv(const cli::ExperimentConfig& cfg, const ReasonArgs& a, const fs::path& out) {
  if (a.labels.empty()) throw ConfigError("--model-outputs needs --labels");
  const auto rules = reasoning::load_rules(cfg.resolve(cfg.rules));
  auto all = reasoning::read_model_outputs(a.model_outputs);
  const auto labels = reasoning::read_labels(a.labels);
  std::vector<reasoning::ExampleInput> train;
  for (const auto& ex : all) {
    const auto it = labels.find(ex.id);
    if (it == labels.end()) continue;
    auto copy = ex;
    copy.labels["main"] = it->second;
    train.push_back(std::move(copy));
  }
  cli::Stopwatch clock;
  const auto run = cli::fit_and_infer(train, all, rules, cfg, a.pcs);
  const double secs = clock.lap();
  fs::create_directories(out);
  reasoning::save_reasoner(out / "reasoner.ckpt", {run.model, run.em.weights, run.schema_hash, "main", json{{"pcs", a.pcs}}});

  std::ostringstream os;
  os << "example_id,score\n";
  for (std::size_t i = 0; i < all.size(); ++i) os << all[i].id << ',' << reasoning::fmt6(run.scores[i]) << '\n';
  graphstore::write_text(out / "scores.csv", os.str());

  const auto fg_schema = reasoning::build_factor_graph({}, rules);
  json rep{{"config", cli::config_to_json(cfg)},
           {"examples", all.size()},
           {"labeled", train.size()},
           {"rule_weights", cli::rule_weights_json(fg_schema, run.em.weights)},
           {"em", cli::em_log_json(run.em.log, fg_schema.weight_names)},
           {"schema_hash", run.schema_hash}};
  cli::finish_report(rep, json{{"reason", secs}});
  write_json(out / "reason_report.json", rep);
  for (const auto& [name, w] : rep["rule_weights"].items()) std::cout << name << " " << w.get<double>() << "\n";
  return 0;
}

int cmd_reason(const Globals& g, const ReasonArgs& a) {
  auto cfg = experiment_config(g);
  if (!a.rules.empty()) {
    cfg.rules = a.rules;
    cfg.base_dir.clear();
  }
  if (a.eta) cfg.em.e.eta = *a.eta;
  if (a.auth_observed) cfg.reasoner.auth_observed = true;
  const fs::path out = output_dir(g, cfg);
  if (!a.model_outputs.empty()) return reason_from_csv(cfg, a, out);

  const auto data = dataset_for(a.store, out, cfg);
  const auto split = graphstore::make_split(data.snapshots, cfg.split.mode, cfg.split.val_fraction);
  const auto rules = reasoning::load_rules(cfg.resolve(cfg.rules));
  const fs::path ckdir = a.checkpoints.empty() ? out / "checkpoints" : fs::path(a.checkpoints);
  const auto models = cli::load_models(ckdir);
  cli::RunOptions opt;
  opt.jobs = g.jobs;
  opt.pcs = a.pcs;
  opt.emit_scores = a.emit_scores;
  opt.out = out;
  json timings = json::object();
  auto r = cli::evaluate_models(data.snapshots, split, models, rules, cfg, opt, timings);
  cli::finish_report(r.report, timings);
  write_json(out / "reason_report.json", r.report);
  reasoning::save_reasoner(out / "reasoner.ckpt", {r.plain->model, r.plain->em.weights, r.plain->schema_hash, "main", json{{"pcs", false}}});
  if (r.pcs)
    reasoning::save_reasoner(out / "reasoner_pcs.ckpt", {r.pcs->model, r.pcs->em.weights, r.pcs->schema_hash, "main", json{{"pcs", true}}});
  reasoning::write_model_outputs(out / "model_outputs.csv",
                                 cli::make_examples(data.snapshots, r.edges, r.single, std::nullopt, false, nullptr,
                                                    cfg.reasoner.auth_observed));
  for (const auto& [name, w] : r.report["rule_weights"]["knowgraph"].items()) std::cout << name << " " << w.get<double>() << "\n";
  const auto& ind = r.report["metrics"]["inductive"];
  if (ind.contains("knowgraph") && !ind["knowgraph"].is_null())
    std::cout << "inductive auc main " << ind["main"]["auc"].dump() << " knowgraph " << ind["knowgraph"]["auc"].dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string scores, labels, predicate = "main";
  std::optional<double> k;
};

std::vector<std::pair<std::string, double>> read_scores(const std::string& path, const std::string& predicate) {
  std::vector<std::pair<std::string, double>> out;
  std::size_t fields = 0;
  graphstore::for_each_line(path, [&](std::string_view line, std::size_t no) {
    const auto f = graphstore::detail::split_csv(line);
    if (no == 1 && !f.empty() && f[0] == "example_id") {
      fields = f.size();
      return true;
    }
    if (fields == 0) fields = f.size();
    if (f.size() != fields) throw ParseError(no, "inconsistent field count");
    if (f.size() == 2) {
      out.emplace_back(std::string(f[0]), reasoning::parse_double(f[1], no));
    } else if (f.size() == 4) {
      if (f[1] == predicate) out.emplace_back(std::string(f[0]), reasoning::parse_double(f[2], no));
    } else {
      throw ParseError(no, "expected example_id,score or example_id,predicate_name,z,observed");
    }
    return true;
  });
  return out;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
  cli::ExperimentConfig cfg;
  if (!g.config.empty()) cfg = experiment_config(g);
  if (a.k) cfg.metrics.k = *a.k;
  const fs::path out = output_dir(g, cfg);
  const auto scores = read_scores(a.scores, a.predicate);
  const auto labels = reasoning::read_labels(a.labels);
  if (scores.empty()) throw DataError("no scores in " + a.scores);
  eval::ScoredSet s;
  for (const auto& [id, v] : scores) {
    const auto it = labels.find(id);
    if (it == labels.end()) throw DataError("no label for example " + id);
    s.scores.push_back(v);
    s.labels.push_back(it->second);
  }
  if (s.positives() == 0 || s.negatives() == 0) throw DataError("AUC is undefined: labels contain a single class");
  const json rep = eval::metric_report(s, cfg.metrics);
  fs::create_directories(out);
  write_json(out / "metrics.json", rep);
  if (!rep["ece"].is_null()) graphstore::write_text(out / "calibration.csv", eval::calibration_csv(eval::ece(s.scores, s.labels, cfg.metrics.bins)));
  std::cout << "auc " << rep["auc"].dump() << " ap " << rep["ap"].dump() << " ece " << rep["ece"].dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------- report

int cmd_report(const Globals& g, bool no_pcs, bool emit_scores, bool auth_observed) {
  auto cfg = experiment_config(g);
  if (auth_observed) cfg.reasoner.auth_observed = true;
  cli::RunOptions opt;
  opt.jobs = g.jobs;
  opt.pcs = !no_pcs;
  opt.emit_scores = emit_scores;
  opt.out = output_dir(g, cfg);
  const auto r = cli::run_experiment(cfg, opt);
  const auto& m = r.report["metrics"];
  for (const char* seg : {"transductive", "inductive"})
    for (const auto& [name, rep] : m[seg].items())
      if (!rep.is_null()) std::cout << seg << " " << name << " auc " << rep["auc"].dump() << " ap " << rep["ap"].dump() << " ece " << rep["ece"].dump() << "\n";
  std::cout << "content_hash " << r.report["content_hash"].get<std::string>() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-enhanced graph reasoning for authentication anomaly detection"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)");
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--jobs", g.jobs, "Worker threads for model training")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output directory (KNOWGRAPH_OUT takes precedence)");

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a snapshot store from LANL auth and redteam files");
  c_ingest->add_option("--auth", ingest.auth, "auth.txt[.gz]")->required();
  c_ingest->add_option("--redteam", ingest.redteam, "redteam.txt[.gz]");
  c_ingest->add_option("--window-secs", ingest.window_secs, "Snapshot window length")->check(CLI::PositiveNumber);
  c_ingest->add_option("--max-events", ingest.max_events, "Read at most this many auth events (0 = all)");

  std::optional<double> malicious_rate;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic snapshot store");
  c_synth->add_option("--malicious-rate", malicious_rate, "Override the synthetic malicious rate");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the knowledge models");
  c_train->add_option("--store", train.store, "Snapshot store (default <out>/store, else the config data)");
  c_train->add_option("--models", train.models, "Comma list of main,auth,encg");
  c_train->add_option("--sigma", train.sigma, "Weight-noise scale for ensemble checkpoints");
  c_train->add_option("--replicas", train.replicas, "Ensemble size");

  ReasonArgs reason;
  auto* c_reason = app.add_subcommand("reason", "Fit rule weights and the posterior, then score test edges");
  c_reason->add_option("--store", reason.store, "Snapshot store");
  c_reason->add_option("--checkpoints", reason.checkpoints, "Model checkpoints (default <out>/checkpoints)");
  c_reason->add_option("--rules", reason.rules, "Rule file (JSON)");
  c_reason->add_option("--eta", reason.eta, "Supervision weight; 0 disables it");
  c_reason->add_flag("--pcs", reason.pcs, "Also run the weight-noise ensembled reasoner");
  c_reason->add_flag("--emit-scores", reason.emit_scores, "Write per-edge scores");
  c_reason->add_flag("--auth-observed", reason.auth_observed, "Treat the logged auth type as observed");
  c_reason->add_option("--model-outputs", reason.model_outputs, "Model-output CSV instead of a store");
  c_reason->add_option("--labels", reason.labels, "Labels CSV for --model-outputs");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Metrics for a score file");
  c_eval->add_option("--scores", ev.scores, "example_id,score or model-output CSV")->required();
  c_eval->add_option("--labels", ev.labels, "example_id,label CSV")->required();
  c_eval->add_option("--predicate", ev.predicate, "Predicate to read from a model-output CSV");
  c_eval->add_option("--k", ev.k, "AP@k fraction");

  bool no_pcs = false, emit_scores = false, report_auth_observed = false;
  auto* c_report = app.add_subcommand("report", "Full run: data, models, reasoner, metrics");
  c_report->add_flag("--no-pcs", no_pcs, "Skip the ensembled variant");
  c_report->add_flag("--emit-scores", emit_scores, "Write per-edge scores");
  c_report->add_flag("--auth-observed", report_auth_observed, "Treat the logged auth type as observed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (c_ingest->parsed()) return cmd_ingest(g, ingest);
    if (c_synth->parsed()) return cmd_synth(g, malicious_rate);
    if (c_train->parsed()) return cmd_train(g, train);
    if (c_reason->parsed()) return cmd_reason(g, reason);
    if (c_eval->parsed()) return cmd_eval(g, ev);
    if (c_report->parsed()) return cmd_report(g, no_pcs, emit_scores, report_auth_observed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kConfig);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kData);
  }
  return 0;
}
