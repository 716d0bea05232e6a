#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gal/bytes.hpp"
#include "gal/trainer.hpp"

namespace gal {

inline constexpr char kCheckpointMagic[8] = {'G', 'A', 'L', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, std::string_view key) {
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error(ErrorKind::config, std::string(key) + ": not a number: '" + std::string(text) + "'");
  }
  return v;
}

inline std::uint64_t parse_u64(std::string_view text, std::string_view key) {
  std::uint64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw Error(ErrorKind::config,
                std::string(key) + ": not an unsigned integer: '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view text, std::string_view key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorKind::config, std::string(key) + ": not a boolean: '" + std::string(text) + "'");
}

template <typename T, typename Fn>
std::string join(const std::vector<T>& xs, Fn&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += fmt(xs[i]);
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    auto piece = text.substr(start, pos == std::string_view::npos ? text.npos : pos - start);
    while (!piece.empty() && piece.front() == ' ') piece.remove_prefix(1);
    while (!piece.empty() && piece.back() == ' ') piece.remove_suffix(1);
    out.push_back(piece);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<double> parse_double_list(std::string_view text, std::string_view key) {
  std::vector<double> out;
  for (auto p : split(text, ',')) out.push_back(parse_double(p, key));
  return out;
}

// Ordered key=value view of a TrainConfig.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const TrainConfig& c) {
  auto num = [](auto v) { return std::to_string(v); };
  return {
      {"layer_dims", join(c.layer_dims, num)},
      {"classes", num(c.classes)},
      {"alpha", join(c.alpha, format_double)},
      {"beta", join(c.beta, format_double)},
      {"epochs_per_block", num(c.epochs_per_block)},
      {"eval_epochs", num(c.eval_epochs)},
      {"batch_size", num(c.batch_size)},
      {"lr", format_double(c.lr)},
      {"seed", num(c.seed)},
      {"use_layernorm", c.use_layernorm ? "true" : "false"},
      {"ln_eps", format_double(c.ln_eps)},
      {"ratio_mode", c.ratio_mode == RatioMode::mean ? "mean" : "total"},
      {"readout_scale", c.readout_scale == ReadoutScale::unit ? "unit" : "inv_sqrt"},
      {"batch_order", c.batch_order == BatchOrder::shuffled ? "shuffled" : "stratified"},
      {"feature_cache", c.feature_cache ? "true" : "false"},
  };
}

// Applies one key=value to a TrainConfig; returns false for unknown keys.
inline bool apply_key_value(TrainConfig& c, std::string_view key, std::string_view value) {
  if (key == "layer_dims") {
    c.layer_dims.clear();
    for (auto p : split(value, ','))
      c.layer_dims.push_back(static_cast<std::size_t>(parse_u64(p, key)));
  } else if (key == "classes") {
    c.classes = parse_u64(value, key);
  } else if (key == "alpha") {
    c.alpha = parse_double_list(value, key);
  } else if (key == "beta") {
    c.beta = parse_double_list(value, key);
  } else if (key == "epochs_per_block") {
    c.epochs_per_block = parse_u64(value, key);
  } else if (key == "eval_epochs") {
    c.eval_epochs = parse_u64(value, key);
  } else if (key == "batch_size") {
    c.batch_size = parse_u64(value, key);
  } else if (key == "lr") {
    c.lr = parse_double(value, key);
  } else if (key == "seed") {
    c.seed = parse_u64(value, key);
  } else if (key == "use_layernorm") {
    c.use_layernorm = parse_bool(value, key);
  } else if (key == "ln_eps") {
    c.ln_eps = parse_double(value, key);
  } else if (key == "ratio_mode") {
    if (value == "mean") c.ratio_mode = RatioMode::mean;
    else if (value == "total") c.ratio_mode = RatioMode::total;
    else throw Error(ErrorKind::config, "ratio_mode must be mean or total");
  } else if (key == "readout_scale") {
    if (value == "unit") c.readout_scale = ReadoutScale::unit;
    else if (value == "inv_sqrt") c.readout_scale = ReadoutScale::inv_sqrt;
    else throw Error(ErrorKind::config, "readout_scale must be unit or inv_sqrt");
  } else if (key == "batch_order") {
    if (value == "shuffled") c.batch_order = BatchOrder::shuffled;
    else if (value == "stratified") c.batch_order = BatchOrder::stratified;
    else throw Error(ErrorKind::config, "batch_order must be shuffled or stratified");
  } else if (key == "feature_cache") {
    c.feature_cache = parse_bool(value, key);
  } else {
    return false;
  }
  return true;
}

inline nlohmann::json log_to_json(const std::vector<EpochRecord>& log) {
  auto arr = nlohmann::json::array();
  for (const auto& r : log) {
    arr.push_back({{"phase", r.phase},
                   {"layer", r.layer},
                   {"epoch", r.epoch},
                   {"mean_ce", r.mean_ce},
                   {"mean_gal", r.mean_gal},
                   {"mean_ratio", r.mean_ratio},
                   {"skipped_batches", r.skipped_batches},
                   {"train_accuracy", r.train_accuracy}});
  }
  return arr;
}

inline std::vector<EpochRecord> log_from_json(const nlohmann::json& arr) {
  std::vector<EpochRecord> out;
  for (const auto& j : arr) {
    EpochRecord r;
    r.phase = j.at("phase").get<std::string>();
    r.layer = j.at("layer").get<std::size_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.mean_ce = j.at("mean_ce").get<double>();
    r.mean_gal = j.at("mean_gal").get<double>();
    r.mean_ratio = j.at("mean_ratio").get<double>();
    r.skipped_batches = j.at("skipped_batches").get<std::size_t>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    out.push_back(std::move(r));
  }
  return out;
}

// Layout (little-endian): magic "GALCKPT1" | u32 version | u32 pair count,
// then per pair u32 length + "key=value" | u32 layer count, then per layer
// u32 rows, u32 cols, f64 weights, and for the frozen and eval readouts a u8
// presence flag followed by u32 rows, u32 cols, f64 data | u32 length + JSON log.
inline std::vector<std::uint8_t> encode_checkpoint(const ModelCheckpoint& ckpt) {
  using detail::put_le;
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  const auto kv = to_key_values(ckpt.config);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    const std::string pair = k + "=" + v;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(pair.size()));
    out.insert(out.end(), pair.begin(), pair.end());
  }
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.blocks.size()));
  auto put_optional = [&](const std::vector<std::optional<Matrix>>& list, std::size_t l) {
    const bool present = l < list.size() && list[l].has_value();
    put_le<std::uint8_t>(out, present ? 1 : 0);
    if (present) detail::put_matrix(out, *list[l]);
  };
  for (std::size_t l = 0; l < ckpt.blocks.size(); ++l) {
    detail::put_matrix(out, ckpt.blocks[l].weights);
    put_optional(ckpt.frozen_readouts, l);
    put_optional(ckpt.eval_readouts, l);
  }
  const std::string log = log_to_json(ckpt.log).dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(log.size()));
  out.insert(out.end(), log.begin(), log.end());
  return out;
}

inline ModelCheckpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.take(sizeof(kCheckpointMagic));
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
    throw Error(ErrorKind::format, "bad checkpoint magic at byte offset 0");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version) +
                                       " at byte offset 8");
  }
  ModelCheckpoint ckpt;
  const auto pairs = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < pairs; ++i) {
    const auto at = in.offset();
    const auto len = in.get<std::uint32_t>();
    const auto raw = in.take(len);
    const std::string pair(raw.begin(), raw.end());
    const auto eq = pair.find('=');
    if (eq == std::string::npos ||
        !apply_key_value(ckpt.config, std::string_view(pair).substr(0, eq),
                         std::string_view(pair).substr(eq + 1))) {
      throw Error(ErrorKind::format, "bad config entry '" + pair + "' at byte offset " +
                                         std::to_string(at));
    }
  }
  const auto layers = in.get<std::uint32_t>();
  auto get_optional = [&]() -> std::optional<Matrix> {
    const auto at = in.offset();
    const auto flag = in.get<std::uint8_t>();
    if (flag > 1) {
      throw Error(ErrorKind::format, "bad presence flag at byte offset " + std::to_string(at));
    }
    if (flag == 0) return std::nullopt;
    return detail::get_matrix(in);
  };
  for (std::uint32_t l = 0; l < layers; ++l) {
    LayerBlock b;
    b.weights = detail::get_matrix(in);
    b.use_layernorm = ckpt.config.use_layernorm;
    b.ln_eps = ckpt.config.ln_eps;
    ckpt.blocks.push_back(std::move(b));
    ckpt.frozen_readouts.push_back(get_optional());
    ckpt.eval_readouts.push_back(get_optional());
  }
  const auto log_len = in.get<std::uint32_t>();
  const auto log_at = in.offset();
  const auto log_raw = in.take(log_len);
  try {
    ckpt.log = log_from_json(nlohmann::json::parse(log_raw.begin(), log_raw.end()));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("bad training log at byte offset ") +
                                       std::to_string(log_at) + ": " + e.what());
  }
  if (!in.done()) {
    throw Error(ErrorKind::format, "trailing bytes at byte offset " + std::to_string(in.offset()));
  }
  return ckpt;
}

inline void write_file_atomic(const std::filesystem::path& path,
                              std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace gal
