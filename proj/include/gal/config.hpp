#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "gal/adversarial.hpp"
#include "gal/checkpoint.hpp"

namespace gal {

// Everything a CLI run needs. Sections of the text file map to the groups
// below; [model] and [train] both feed TrainConfig.
struct RunConfig {
  // [data]
  std::string source = "mnist";  // mnist | cifar10
  std::filesystem::path data_dir = "data/mnist";
  std::size_t train_samples = 0;  // 0: whole split
  std::size_t test_samples = 0;
  bool fetch = false;
  std::filesystem::path manifest;  // empty: built-in MNIST manifest

  TrainConfig train;

  // [attack]
  AttackKind attack = AttackKind::fgsm;
  std::vector<double> epsilons{0.0,  0.02, 0.04, 0.06, 0.08, 0.1,  0.12, 0.14,
                               0.16, 0.18, 0.2,  0.22, 0.24, 0.26, 0.28, 0.3};
  bool clip = true;
  std::size_t attack_chunk = 500;

  // [analysis]
  std::vector<std::uint16_t> energy_classes{0, 2};
  std::size_t hopfield_samples = 100;
  std::vector<std::size_t> analysis_layers;  // empty: every layer
  std::size_t spectrum_samples = 0;          // 0: whole test split

  // [sweep]
  std::vector<double> alpha_grid;
  std::vector<double> beta_grid;
  std::size_t sweep_layer = 1;
  double sweep_eps = 0.1;

  // [output]
  std::filesystem::path out_dir = "runs/default";

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::size_t> parse_size_list(std::string_view v, std::string_view key) {
  std::vector<std::size_t> out;
  for (auto p : split(v, ',')) out.push_back(static_cast<std::size_t>(parse_u64(p, key)));
  return out;
}

inline std::vector<std::uint16_t> parse_class_list(std::string_view v, std::string_view key) {
  std::vector<std::uint16_t> out;
  for (auto p : split(v, ',')) {
    const auto c = parse_u64(p, key);
    if (c > 0xffff) throw Error(ErrorKind::config, std::string(key) + ": class id too large");
    out.push_back(static_cast<std::uint16_t>(c));
  }
  return out;
}

inline bool is_model_key(std::string_view key) {
  return key == "layer_dims" || key == "classes" || key == "use_layernorm" || key == "ln_eps" ||
         key == "readout_scale";
}

}  // namespace detail

// Sets one "section.key" entry. Unknown sections or keys are config errors.
inline void set_run_key(RunConfig& rc, std::string_view section, std::string_view key,
                        std::string_view value) {
  const std::string full = std::string(section) + "." + std::string(key);
  auto unknown = [&] { throw Error(ErrorKind::config, "unknown config key '" + full + "'"); };
  if (section == "data") {
    if (key == "source") {
      if (value != "mnist" && value != "cifar10")
        throw Error(ErrorKind::config, full + " must be mnist or cifar10");
      rc.source = value;
    } else if (key == "dir") {
      rc.data_dir = std::string(value);
    } else if (key == "train_samples") {
      rc.train_samples = parse_u64(value, full);
    } else if (key == "test_samples") {
      rc.test_samples = parse_u64(value, full);
    } else if (key == "fetch") {
      rc.fetch = parse_bool(value, full);
    } else if (key == "manifest") {
      rc.manifest = std::string(value);
    } else {
      unknown();
    }
  } else if (section == "model" || section == "train") {
    // Each TrainConfig key lives in exactly one of the two sections.
    if (detail::is_model_key(key) != (section == "model")) unknown();
    if (!apply_key_value(rc.train, key, value)) unknown();
  } else if (section == "attack") {
    if (key == "kind") rc.attack = parse_attack_kind(value);
    else if (key == "eps") rc.epsilons = parse_double_list(value, full);
    else if (key == "clip") rc.clip = parse_bool(value, full);
    else if (key == "chunk") rc.attack_chunk = parse_u64(value, full);
    else unknown();
  } else if (section == "analysis") {
    if (key == "classes") rc.energy_classes = detail::parse_class_list(value, full);
    else if (key == "hopfield_samples") rc.hopfield_samples = parse_u64(value, full);
    else if (key == "layers") rc.analysis_layers = detail::parse_size_list(value, full);
    else if (key == "spectrum_samples") rc.spectrum_samples = parse_u64(value, full);
    else unknown();
  } else if (section == "sweep") {
    if (key == "alpha_grid") rc.alpha_grid = parse_double_list(value, full);
    else if (key == "beta_grid") rc.beta_grid = parse_double_list(value, full);
    else if (key == "layer") rc.sweep_layer = parse_u64(value, full);
    else if (key == "eps") rc.sweep_eps = parse_double(value, full);
    else unknown();
  } else if (section == "output") {
    if (key == "dir") rc.out_dir = std::string(value);
    else unknown();
  } else {
    unknown();
  }
}

// "section.key=value", as given to --set.
inline void apply_override(RunConfig& rc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw Error(ErrorKind::config,
                "override must look like section.key=value, got '" + std::string(assignment) + "'");
  }
  set_run_key(rc, detail::trim(assignment.substr(0, dot)),
              detail::trim(assignment.substr(dot + 1, eq - dot - 1)),
              detail::trim(assignment.substr(eq + 1)));
}

inline void validate(const RunConfig& rc) {
  validate(rc.train);
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, msg); };
  if (rc.train.layer_dims.front() != 784) fail("model.layer_dims must start with 784 input pixels");
  if (rc.train.classes != 10) fail("model.classes must be 10 for mnist and cifar10");
  for (double e : rc.epsilons)
    if (!(e >= 0)) fail("attack.eps entries must be >= 0");
  if (rc.attack_chunk < 1) fail("attack.chunk must be >= 1");
  if (rc.energy_classes.empty()) fail("analysis.classes must not be empty");
  for (auto c : rc.energy_classes)
    if (c >= rc.train.classes) fail("analysis.classes entry " + std::to_string(c) + " out of range");
  if (rc.hopfield_samples < 1) fail("analysis.hopfield_samples must be >= 1");
  for (auto l : rc.analysis_layers)
    if (l < 1 || l > rc.train.hidden_layers()) fail("analysis.layers entry out of range");
  if (rc.sweep_layer < 1 || rc.sweep_layer > rc.train.hidden_layers())
    fail("sweep.layer out of range");
  for (double a : rc.alpha_grid)
    if (!(a > 0)) fail("sweep.alpha_grid entries must be > 0");
  for (double b : rc.beta_grid)
    if (!(b >= 0)) fail("sweep.beta_grid entries must be >= 0");
  if (!(rc.sweep_eps >= 0)) fail("sweep.eps must be >= 0");
}

inline RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  std::string section;
  std::vector<std::string> seen;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    auto line = detail::trim(raw);
    const auto hash = line.find_first_of("#;");
    if (hash != std::string_view::npos) line = detail::trim(line.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::parse, where + "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw Error(ErrorKind::parse, where + "expected key = value");
    if (section.empty()) throw Error(ErrorKind::parse, where + "key outside any [section]");
    const auto key = detail::trim(line.substr(0, eq));
    const std::string full = section + "." + std::string(key);
    if (std::find(seen.begin(), seen.end(), full) != seen.end())
      throw Error(ErrorKind::config, where + "duplicate key '" + full + "'");
    seen.push_back(full);
    try {
      set_run_key(rc, section, key, detail::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(e.kind(), where + e.what());
    }
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

// Canonical text form; parse_run_config(to_text(rc)) == rc.
inline std::string to_text(const RunConfig& rc) {
  auto num = [](auto v) { return std::to_string(v); };
  std::ostringstream out;
  out << "[data]\n"
      << "source = " << rc.source << '\n'
      << "dir = " << rc.data_dir.string() << '\n'
      << "train_samples = " << rc.train_samples << '\n'
      << "test_samples = " << rc.test_samples << '\n'
      << "fetch = " << (rc.fetch ? "true" : "false") << '\n';
  if (!rc.manifest.empty()) out << "manifest = " << rc.manifest.string() << '\n';
  std::ostringstream model, train;
  for (const auto& [k, v] : to_key_values(rc.train))
    (detail::is_model_key(k) ? model : train) << k << " = " << v << '\n';
  out << "\n[model]\n" << model.str() << "\n[train]\n" << train.str();
  out << "\n[attack]\n"
      << "kind = " << to_string(rc.attack) << '\n'
      << "eps = " << join(rc.epsilons, format_double) << '\n'
      << "clip = " << (rc.clip ? "true" : "false") << '\n'
      << "chunk = " << rc.attack_chunk << '\n';
  out << "\n[analysis]\n"
      << "classes = " << join(rc.energy_classes, num) << '\n'
      << "hopfield_samples = " << rc.hopfield_samples << '\n';
  if (!rc.analysis_layers.empty()) out << "layers = " << join(rc.analysis_layers, num) << '\n';
  out << "spectrum_samples = " << rc.spectrum_samples << '\n';
  out << "\n[sweep]\n";
  if (!rc.alpha_grid.empty()) out << "alpha_grid = " << join(rc.alpha_grid, format_double) << '\n';
  if (!rc.beta_grid.empty()) out << "beta_grid = " << join(rc.beta_grid, format_double) << '\n';
  out << "layer = " << rc.sweep_layer << '\n'
      << "eps = " << format_double(rc.sweep_eps) << '\n';
  out << "\n[output]\n"
      << "dir = " << rc.out_dir.string() << '\n';
  return out.str();
}

// Train and test splits as configured, truncated to the requested sizes.
inline std::pair<Dataset, Dataset> load_splits(const RunConfig& rc) {
  const auto& d = rc.data_dir;
  auto need = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p))
      throw Error(ErrorKind::data, "missing data file " + p.string() + " (run fetch-data)");
    return p;
  };
  Dataset train, test;
  if (rc.source == "mnist") {
    train = load_mnist_idx(need(d / "train-images-idx3-ubyte"), need(d / "train-labels-idx1-ubyte"));
    test = load_mnist_idx(need(d / "t10k-images-idx3-ubyte"), need(d / "t10k-labels-idx1-ubyte"));
  } else {
    std::vector<std::filesystem::path> parts;
    for (int i = 1; i <= 5; ++i) parts.push_back(need(d / ("data_batch_" + std::to_string(i) + ".bin")));
    const std::filesystem::path test_part[] = {need(d / "test_batch.bin")};
    train = load_cifar10_gray(parts);
    test = load_cifar10_gray(test_part);
  }
  if (rc.train_samples) train = head(train, rc.train_samples);
  if (rc.test_samples) test = head(test, rc.test_samples);
  return {std::move(train), std::move(test)};
}

}  // namespace gal
