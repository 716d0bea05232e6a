// galctl: train, attack, analyze and sweep layer-wise GAL models.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gal/analysis.hpp"
#include "gal/config.hpp"
#include "gal/fetch.hpp"
#include "gal/sweep.hpp"

#ifndef GAL_VERSION
#define GAL_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::optional<std::size_t> layer;
  std::string eps;
  std::string mode;
  bool baseline = false;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  gal::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                         text.size()));
}

// Collects artifacts and writes manifest.json when the command finishes.
class Run {
 public:
  Run(std::string command, gal::RunConfig rc, std::uint64_t seed)
      : command_(std::move(command)), rc_(std::move(rc)), seed_(seed), started_(utc_now()) {
    fs::create_directories(rc_.out_dir);
  }

  const gal::RunConfig& config() const { return rc_; }
  fs::path path(const std::string& name) const { return rc_.out_dir / name; }
  void artifact(const std::string& role, const fs::path& p) { artifacts_[role] = p.string(); }

  void finish() {
    write_text_atomic(path("config.ini"), gal::to_text(rc_));
    artifact("config", path("config.ini"));
    json m = {{"command", command_},
              {"version", GAL_VERSION},
              {"seed", seed_},
              {"started", started_},
              {"finished", utc_now()},
              {"config", gal::to_text(rc_)},
              {"artifacts", artifacts_}};
    write_text_atomic(path("manifest.json"), m.dump(2) + "\n");
  }

 private:
  std::string command_;
  gal::RunConfig rc_;
  std::uint64_t seed_;
  std::string started_;
  std::map<std::string, std::string> artifacts_;
};

gal::RunConfig resolve_config(const Options& o) {
  gal::RunConfig rc = o.config.empty() ? gal::RunConfig{} : gal::load_run_config(o.config);
  for (const auto& s : o.overrides) gal::apply_override(rc, s);
  if (o.seed) rc.train.seed = *o.seed;
  if (!o.out.empty()) rc.out_dir = o.out;
  if (!o.eps.empty()) rc.epsilons = gal::parse_double_list(o.eps, "--eps");
  gal::validate(rc);
  return rc;
}

void maybe_fetch(const gal::RunConfig& rc) {
  if (!rc.fetch) return;
  if (rc.source != "mnist" && rc.manifest.empty())
    throw gal::Error(gal::ErrorKind::config, "data.fetch for cifar10 needs data.manifest");
  const auto manifest = rc.manifest.empty()
                            ? gal::default_mnist_manifest()
                            : gal::parse_manifest(gal::detail::read_all(rc.manifest));
  gal::FetchStats stats;
  gal::fetch_dataset(manifest, rc.data_dir, &stats);
  std::cerr << "fetch: " << stats.downloaded << " downloaded, " << stats.cached << " cached\n";
}

std::vector<std::size_t> layers_for(const gal::ModelCheckpoint& ckpt, const Options& o,
                                    const std::vector<std::size_t>& configured = {}) {
  if (o.layer) {
    gal::detail::check_layer(ckpt, *o.layer);
    return {*o.layer};
  }
  if (!configured.empty()) return configured;
  std::vector<std::size_t> all;
  for (std::size_t l = 1; l <= ckpt.layers(); ++l) all.push_back(l);
  return all;
}

void write_log(const fs::path& p, const std::vector<gal::EpochRecord>& log) {
  std::ostringstream out;
  for (const auto& rec : gal::log_to_json(log)) out << rec.dump() << '\n';
  write_text_atomic(p, out.str());
}

int cmd_train(const Options& o) {
  const auto rc = resolve_config(o);
  Run run("train", rc, rc.train.seed);
  maybe_fetch(rc);
  const auto [train, test] = gal::load_splits(rc);
  std::cerr << "train: " << train.size() << " samples, layers " << rc.train.hidden_layers()
            << "\n";

  auto ckpt = gal::train_layerwise(train, rc.train);
  gal::train_eval_readouts(ckpt, train, rc.train.eval_epochs);
  gal::save_checkpoint(ckpt, run.path("model.ckpt"));
  run.artifact("checkpoint", run.path("model.ckpt"));
  write_log(run.path("train_log.jsonl"), ckpt.log);
  run.artifact("train_log", run.path("train_log.jsonl"));

  std::ostringstream eval;
  for (std::size_t l = 1; l <= ckpt.layers(); ++l) {
    const json rec = {{"kind", "eval"}, {"model", "gal"}, {"layer", l},
                      {"train_accuracy", gal::evaluate(ckpt, train, l)},
                      {"test_accuracy", gal::evaluate(ckpt, test, l)}};
    eval << rec.dump() << '\n';
  }
  if (o.baseline) {
    const auto base = gal::train_end_to_end_baseline(train, rc.train);
    gal::save_checkpoint(base, run.path("baseline.ckpt"));
    run.artifact("baseline_checkpoint", run.path("baseline.ckpt"));
    const std::size_t top = base.layers();
    const json rec = {{"kind", "eval"}, {"model", "baseline"}, {"layer", top},
                      {"train_accuracy", gal::evaluate(base, train, top)},
                      {"test_accuracy", gal::evaluate(base, test, top)}};
    eval << rec.dump() << '\n';
  }
  write_text_atomic(run.path("eval.jsonl"), eval.str());
  run.artifact("eval", run.path("eval.jsonl"));
  std::cout << eval.str();
  run.finish();
  return 0;
}

gal::ModelCheckpoint require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw gal::Error(gal::ErrorKind::config, "--checkpoint is required");
  return gal::load_checkpoint(o.checkpoint);
}

int cmd_evaluate(const Options& o) {
  const auto rc = resolve_config(o);
  const auto ckpt = require_checkpoint(o);
  Run run("evaluate", rc, ckpt.config.seed);
  run.artifact("checkpoint", o.checkpoint);
  const auto [train, test] = gal::load_splits(rc);
  std::ostringstream out;
  for (auto l : layers_for(ckpt, o)) {
    if (l > ckpt.eval_readouts.size() || !ckpt.eval_readouts[l - 1]) continue;
    out << json{{"kind", "eval"}, {"layer", l}, {"test_accuracy", gal::evaluate(ckpt, test, l)}}
               .dump()
        << '\n';
  }
  if (out.str().empty())
    throw gal::Error(gal::ErrorKind::state, "checkpoint has no evaluation readouts; run train first");
  write_text_atomic(run.path("eval.jsonl"), out.str());
  run.artifact("eval", run.path("eval.jsonl"));
  std::cout << out.str();
  run.finish();
  return 0;
}

int cmd_attack(const Options& o) {
  auto rc = resolve_config(o);
  if (!o.mode.empty()) rc.attack = gal::parse_attack_kind(o.mode);
  const auto ckpt = require_checkpoint(o);
  const std::uint64_t seed = o.seed ? *o.seed : rc.train.seed;
  Run run("attack", rc, seed);
  run.artifact("checkpoint", o.checkpoint);
  const auto [train, test] = gal::load_splits(rc);
  gal::SweepOptions opt;
  opt.clip = rc.clip;
  opt.chunk = rc.attack_chunk;
  if (o.layer) opt.layers = {*o.layer};
  const auto report = gal::robustness_sweep(ckpt, test, rc.attack, rc.epsilons, seed, opt);
  std::ostringstream out;
  gal::write_jsonl(out, report);
  const auto p = run.path(std::string("attack_") + gal::to_string(rc.attack) + ".jsonl");
  write_text_atomic(p, out.str());
  run.artifact("report", p);
  std::cout << out.str();
  run.finish();
  return 0;
}

int cmd_analyze(const Options& o) {
  const auto rc = resolve_config(o);
  const auto ckpt = require_checkpoint(o);
  const std::string mode = o.mode.empty() ? "spectrum" : o.mode;
  Run run("analyze", rc, rc.train.seed);
  run.artifact("checkpoint", o.checkpoint);
  const auto [train, test] = gal::load_splits(rc);
  const auto layers = layers_for(ckpt, o, rc.analysis_layers);

  if (mode == "energy") {
    std::ostringstream out;
    for (auto l : layers) {
      const auto model = gal::build_hopfield(ckpt, train, l, rc.hopfield_samples, rc.train.seed);
      const auto recs = gal::energy_scatter(ckpt, test, l, rc.energy_classes, model);
      gal::write_jsonl(out, recs);
      if (rc.energy_classes.size() >= 2) {
        std::cerr << "layer " << l << " energy separation "
                  << gal::energy_separation(recs, rc.energy_classes[0], rc.energy_classes[1])
                  << "\n";
      }
    }
    write_text_atomic(run.path("energy.jsonl"), out.str());
    run.artifact("report", run.path("energy.jsonl"));
  } else if (mode == "spectrum") {
    const auto sample = gal::head(test, rc.spectrum_samples);
    std::ostringstream out;
    for (auto l : layers) {
      const auto fit = gal::spectrum_fit(gal::layer_features(ckpt, sample, l).features);
      out << gal::to_json(fit, l).dump() << '\n';
    }
    write_text_atomic(run.path("spectrum.jsonl"), out.str());
    run.artifact("report", run.path("spectrum.jsonl"));
    std::cout << out.str();
  } else if (mode == "export") {
    for (auto l : layers) {
      const auto p = run.path("features_layer" + std::to_string(l) + ".bin");
      gal::export_features(ckpt, test, l, p);
      run.artifact("features_layer" + std::to_string(l), p);
    }
  } else {
    throw gal::Error(gal::ErrorKind::config,
                     "--mode must be energy, spectrum or export, got '" + mode + "'");
  }
  run.finish();
  return 0;
}

int cmd_sweep(const Options& o) {
  auto rc = resolve_config(o);
  if (o.layer) rc.sweep_layer = *o.layer;
  if (rc.alpha_grid.empty() || rc.beta_grid.empty())
    throw gal::Error(gal::ErrorKind::config, "sweep.alpha_grid and sweep.beta_grid are required");
  Run run("sweep", rc, rc.train.seed);
  maybe_fetch(rc);
  const auto [train, test] = gal::load_splits(rc);
  gal::ModelCheckpoint base;
  if (!o.checkpoint.empty()) {
    base = gal::load_checkpoint(o.checkpoint);
    run.artifact("base_checkpoint", o.checkpoint);
  } else {
    // Only the blocks below the swept layer are reused.
    base.config = rc.train;
    for (std::size_t l = 1; l < rc.sweep_layer; ++l) gal::train_layer(base, train, l);
  }
  if (rc.sweep_layer > base.layers() + 1 || rc.sweep_layer > base.config.hidden_layers()) {
    throw gal::Error(gal::ErrorKind::config, "base checkpoint has " +
                                                 std::to_string(base.layers()) +
                                                 " layers; cannot sweep layer " +
                                                 std::to_string(rc.sweep_layer));
  }
  const auto grid = gal::run_sweep(base, train, test, rc.sweep_layer, rc.alpha_grid,
                                   rc.beta_grid, rc.sweep_eps);
  std::ostringstream out;
  gal::write_jsonl(out, grid);
  write_text_atomic(run.path("sweep.jsonl"), out.str());
  run.artifact("report", run.path("sweep.jsonl"));
  std::cout << out.str();
  run.finish();
  return 0;
}

int cmd_fetch(const Options& o) {
  auto rc = resolve_config(o);
  if (!o.out.empty()) rc.data_dir = o.out;
  rc.fetch = true;
  maybe_fetch(rc);
  std::cout << rc.data_dir.string() << '\n';
  return 0;
}

int exit_code(gal::ErrorKind k) {
  switch (k) {
    case gal::ErrorKind::config:
    case gal::ErrorKind::parse:
    case gal::ErrorKind::index:
      return 2;
    case gal::ErrorKind::data:
    case gal::ErrorKind::integrity:
    case gal::ErrorKind::transport:
    case gal::ErrorKind::format:
      return 3;
    case gal::ErrorKind::state:
      return 4;
    case gal::ErrorKind::numeric:
      return 5;
    default:
      return 1;
  }
}

void one_line_error(const std::string& kind, std::string msg) {
  for (char& c : msg)
    if (c == '\n') c = ' ';
  std::cerr << "error kind=" << kind << " msg=" << msg << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise GAL training, robustness and analysis"};
  app.set_version_flag("--version", GAL_VERSION);
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config file")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "override, section.key=value (repeatable)");
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--out", o.out, "output directory");
    return sub;
  };
  auto* train = common(app.add_subcommand("train", "train blocks layer by layer, then probes"));
  train->add_flag("--baseline", o.baseline, "also train the end-to-end backprop baseline");
  auto* evaluate = common(app.add_subcommand("evaluate", "probe accuracy on the test split"));
  auto* attack = common(app.add_subcommand("attack", "fgsm / gaussian robustness curves"));
  auto* analyze = common(app.add_subcommand("analyze", "energy, spectrum or feature export"));
  auto* sweep = common(app.add_subcommand("sweep", "retrain one layer over an (alpha, beta) grid"));
  auto* fetch = common(app.add_subcommand("fetch-data", "download and verify dataset files"));
  for (auto* sub : {evaluate, attack, analyze, sweep})
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  for (auto* sub : {evaluate, attack, analyze, sweep})
    sub->add_option("--layer", o.layer, "layer index, 1-based");
  attack->add_option("--eps", o.eps, "comma-separated strengths");
  attack->add_option("--mode", o.mode, "fgsm or gaussian");
  analyze->add_option("--mode", o.mode, "energy, spectrum or export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    one_line_error("usage", e.what());
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(o);
    if (evaluate->parsed()) return cmd_evaluate(o);
    if (attack->parsed()) return cmd_attack(o);
    if (analyze->parsed()) return cmd_analyze(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (fetch->parsed()) return cmd_fetch(o);
  } catch (const gal::Error& e) {
    one_line_error(gal::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    one_line_error("internal", e.what());
    return 1;
  }
  return 1;
}
