#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gal/dataset.hpp"
#include "gal/network.hpp"
#include "gal/objective.hpp"
#include "gal/optimizer.hpp"
#include "gal/rng.hpp"

namespace gal {

struct TrainConfig {
  std::vector<std::size_t> layer_dims{784, 1000, 1000, 1000};
  std::size_t classes = 10;
  std::vector<double> alpha{1.8, 1.05, 2.62};
  std::vector<double> beta{0.7, 0.6, 1.4};
  std::size_t epochs_per_block = 10;
  std::size_t eval_epochs = 10;
  std::size_t batch_size = 100;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool use_layernorm = true;
  double ln_eps = 1e-5;
  RatioMode ratio_mode = RatioMode::mean;
  ReadoutScale readout_scale = ReadoutScale::unit;
  BatchOrder batch_order = BatchOrder::shuffled;
  bool feature_cache = true;

  std::size_t hidden_layers() const noexcept {
    return layer_dims.empty() ? 0 : layer_dims.size() - 1;
  }

  GalConfig gal(std::size_t layer) const {
    GalConfig g;
    g.alpha = alpha.at(layer - 1);
    g.beta = beta.at(layer - 1);
    g.ratio_mode = ratio_mode;
    return g;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::config, msg); };
  if (cfg.layer_dims.size() < 2) fail("layer_dims needs an input and at least one hidden width");
  for (auto d : cfg.layer_dims)
    if (d < 1) fail("layer_dims entries must be >= 1");
  const auto hidden = cfg.hidden_layers();
  if (cfg.alpha.size() != hidden) {
    fail("alpha has " + std::to_string(cfg.alpha.size()) + " entries for " +
         std::to_string(hidden) + " hidden layers");
  }
  if (cfg.beta.size() != hidden) {
    fail("beta has " + std::to_string(cfg.beta.size()) + " entries for " +
         std::to_string(hidden) + " hidden layers");
  }
  for (double a : cfg.alpha)
    if (!(a > 0)) fail("alpha entries must be > 0");
  for (double b : cfg.beta)
    if (!(b >= 0)) fail("beta entries must be >= 0");
  if (cfg.classes < 2) fail("classes must be >= 2");
  if (cfg.batch_size < 2) fail("batch_size must be >= 2");
  if (cfg.epochs_per_block < 1) fail("epochs_per_block must be >= 1");
  if (!(cfg.lr > 0)) fail("lr must be > 0");
  if (!(cfg.ln_eps > 0)) fail("ln_eps must be > 0");
}

struct EpochRecord {
  std::string phase;  // "gal", "readout", "baseline"
  std::size_t layer = 0;
  std::size_t epoch = 0;
  double mean_ce = 0.0;
  double mean_gal = 0.0;
  double mean_ratio = 0.0;
  std::size_t skipped_batches = 0;
  double train_accuracy = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct ModelCheckpoint {
  std::vector<LayerBlock> blocks;
  std::vector<std::optional<Matrix>> frozen_readouts;
  std::vector<std::optional<Matrix>> eval_readouts;
  TrainConfig config;
  std::vector<EpochRecord> log;

  std::size_t layers() const noexcept { return blocks.size(); }

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

namespace detail {

// Sub-stream ids; each layer owns its own stream so a single layer can be
// retrained in isolation with the same randomness.
inline std::uint64_t layer_stream(std::size_t layer) { return layer; }
inline std::uint64_t probe_stream(std::size_t layer) { return 1000 + layer; }
inline constexpr std::uint64_t kBaselineStream = 2000;

inline LayerBlock init_block(Rng& rng, std::size_t in, std::size_t out, const TrainConfig& cfg) {
  LayerBlock b;
  b.weights = gaussian_matrix(rng, in, out, 0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  b.use_layernorm = cfg.use_layernorm;
  b.ln_eps = cfg.ln_eps;
  return b;
}

inline void check_layer(const ModelCheckpoint& ckpt, std::size_t layer) {
  if (layer < 1 || layer > ckpt.layers()) {
    throw Error(ErrorKind::index, "layer " + std::to_string(layer) + " outside [1, " +
                                      std::to_string(ckpt.layers()) + "]");
  }
}

inline std::string indices_text(std::span<const std::size_t> idx) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < idx.size(); ++i) ss << (i ? "," : "") << idx[i];
  return ss.str();
}

inline void check_finite(double loss, const std::string& phase, std::size_t layer,
                         std::size_t epoch, std::span<const std::size_t> idx) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::numeric, "non-finite loss in phase " + phase + " layer " +
                                        std::to_string(layer) + " epoch " +
                                        std::to_string(epoch) + " batch indices [" +
                                        indices_text(idx) + "]");
  }
}

}  // namespace detail

inline void check_dataset(const Dataset& ds, const TrainConfig& cfg) {
  if (ds.classes != cfg.classes) {
    throw Error(ErrorKind::config, "dataset has " + std::to_string(ds.classes) +
                                       " classes, config expects " +
                                       std::to_string(cfg.classes));
  }
  if (ds.images.cols() != cfg.layer_dims.front()) {
    throw Error(ErrorKind::config, "dataset inputs have " + std::to_string(ds.images.cols()) +
                                       " features, layer_dims starts at " +
                                       std::to_string(cfg.layer_dims.front()));
  }
  if (ds.size() < 2) throw Error(ErrorKind::data, "dataset needs at least 2 samples");
}

// Trains block `layer` (1-based) on top of frozen blocks 1..layer-1 already in
// ckpt, replacing anything at or above `layer`. Only the new block's weights
// receive updates.
inline void train_layer(ModelCheckpoint& ckpt, const Dataset& ds, std::size_t layer) {
  const TrainConfig& cfg = ckpt.config;
  if (layer < 1 || layer > cfg.hidden_layers() || ckpt.blocks.size() < layer - 1) {
    throw Error(ErrorKind::index, "cannot train layer " + std::to_string(layer));
  }
  ckpt.blocks.resize(layer - 1);
  ckpt.frozen_readouts.resize(layer - 1);
  ckpt.eval_readouts.resize(layer - 1);

  Rng rng(derive_seed(cfg.seed, detail::layer_stream(layer)));
  LayerBlock block =
      detail::init_block(rng, cfg.layer_dims[layer - 1], cfg.layer_dims[layer], cfg);
  const ReadoutHead head =
      random_readout(rng, cfg.layer_dims[layer], cfg.classes, cfg.readout_scale);
  const GalConfig gal = cfg.gal(layer);
  AdamState adam = adam_for(block.weights, cfg.lr);

  std::optional<Matrix> cached_inputs;
  if (cfg.feature_cache) cached_inputs = forward_through(ckpt.blocks, ds.images, layer - 1);

  for (std::size_t epoch = 1; epoch <= cfg.epochs_per_block; ++epoch) {
    EpochRecord rec{"gal", layer, epoch};
    std::size_t counted = 0;
    std::size_t ratio_batches = 0;
    std::size_t correct = 0;
    for (const auto& idx : batch_plan(ds.labels, cfg.batch_size, rng, cfg.batch_order)) {
      std::vector<std::uint16_t> y;
      y.reserve(idx.size());
      for (auto i : idx) y.push_back(ds.labels[i]);
      const Matrix h_prev = cached_inputs
                                ? gather_rows(*cached_inputs, idx)
                                : forward_through(ckpt.blocks, gather_rows(ds.images, idx),
                                                  layer - 1);
      const auto fwd = forward_block(block, h_prev);
      const auto loss = local_loss(fwd.output, y, head, gal);
      detail::check_finite(loss.loss, "gal", layer, epoch, idx);
      adam_step(adam, block.weights, grad_block_params(fwd.cache, loss.grad_h));

      ++counted;
      rec.mean_ce += loss.parts.ce;
      rec.mean_gal += loss.parts.gal;
      if (loss.parts.gal_skipped) {
        ++rec.skipped_batches;
      } else {
        rec.mean_ratio += loss.parts.ratio;
        ++ratio_batches;
      }
      const Matrix logits = matmul(fwd.output, head.weights);
      for (std::size_t i = 0; i < y.size(); ++i)
        if (argmax(logits.row(i)) == y[i]) ++correct;
    }
    rec.mean_ce /= static_cast<double>(counted);
    rec.mean_gal /= static_cast<double>(counted);
    if (ratio_batches) rec.mean_ratio /= static_cast<double>(ratio_batches);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    ckpt.log.push_back(rec);
  }

  ckpt.blocks.push_back(std::move(block));
  ckpt.frozen_readouts.push_back(head.weights);
  ckpt.eval_readouts.push_back(std::nullopt);
}

// Layer-wise protocol: block l trained with its own frozen random readout
// while blocks below it stay fixed.
inline ModelCheckpoint train_layerwise(const Dataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  check_dataset(ds, cfg);
  ModelCheckpoint ckpt;
  ckpt.config = cfg;
  for (std::size_t l = 1; l <= cfg.hidden_layers(); ++l) train_layer(ckpt, ds, l);
  return ckpt;
}

// Fits a linear probe (N × C) on fixed features by Adam on cross-entropy.
inline Matrix train_linear_probe(const Matrix& features, Labels labels, std::size_t classes,
                                 std::size_t epochs, std::size_t batch_size, double lr,
                                 Rng& rng, std::vector<EpochRecord>* log = nullptr,
                                 std::size_t layer = 0) {
  ReadoutHead head{gaussian_matrix(rng, features.cols(), classes, 0.0,
                                   1.0 / std::sqrt(static_cast<double>(features.cols()))),
                   false};
  AdamState adam = adam_for(head.weights, lr);
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec{"readout", layer, epoch};
    std::size_t counted = 0;
    std::size_t correct = 0;
    for (const auto& idx : batch_plan(labels, batch_size, rng)) {
      std::vector<std::uint16_t> y;
      for (auto i : idx) y.push_back(labels[i]);
      const Matrix h = gather_rows(features, idx);
      const auto ce = softmax_cross_entropy(matmul(h, head.weights), y);
      detail::check_finite(ce.loss, "readout", layer, epoch, idx);
      adam_step(adam, head.weights, matmul_tn(h, ce.grad_logits));
      rec.mean_ce += ce.loss;
      correct += ce.correct;
      ++counted;
    }
    rec.mean_ce /= static_cast<double>(counted);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    if (log) log->push_back(rec);
  }
  return head.weights;
}

// Fresh evaluation readout per layer on frozen features; blocks untouched.
inline void train_eval_readouts(ModelCheckpoint& ckpt, const Dataset& ds,
                                std::size_t epochs) {
  if (ckpt.blocks.empty()) throw Error(ErrorKind::state, "no trained blocks in checkpoint");
  check_dataset(ds, ckpt.config);
  ckpt.eval_readouts.resize(ckpt.layers());
  Matrix h = ds.images;
  for (std::size_t l = 1; l <= ckpt.layers(); ++l) {
    h = forward_block(ckpt.blocks[l - 1], h).output;
    Rng rng(derive_seed(ckpt.config.seed, detail::probe_stream(l)));
    ckpt.eval_readouts[l - 1] =
        train_linear_probe(h, ds.labels, ckpt.config.classes, epochs, ckpt.config.batch_size,
                           ckpt.config.lr, rng, &ckpt.log, l);
  }
}

// Probe for one layer only; same stream as train_eval_readouts, so the result
// matches the corresponding entry of a full pass.
inline void train_eval_readout(ModelCheckpoint& ckpt, const Dataset& ds, std::size_t layer,
                               std::size_t epochs) {
  detail::check_layer(ckpt, layer);
  check_dataset(ds, ckpt.config);
  ckpt.eval_readouts.resize(ckpt.layers());
  const Matrix h = forward_through(ckpt.blocks, ds.images, layer);
  Rng rng(derive_seed(ckpt.config.seed, detail::probe_stream(layer)));
  ckpt.eval_readouts[layer - 1] =
      train_linear_probe(h, ds.labels, ckpt.config.classes, epochs, ckpt.config.batch_size,
                         ckpt.config.lr, rng, &ckpt.log, layer);
}

struct BackpropResult {
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<Matrix> block_grads;
  Matrix readout_grad;
};

// CE(h_L(x)·R, y) and its gradient w.r.t. every block and the readout.
inline BackpropResult backprop(const std::vector<LayerBlock>& blocks, const Matrix& readout,
                               const Matrix& x, Labels y) {
  std::vector<BlockCache> caches;
  Matrix h = x;
  for (const auto& b : blocks) {
    auto fwd = forward_block(b, h);
    h = std::move(fwd.output);
    caches.push_back(std::move(fwd.cache));
  }
  const auto ce = softmax_cross_entropy(matmul(h, readout), y);
  BackpropResult out;
  out.loss = ce.loss;
  out.correct = ce.correct;
  out.readout_grad = matmul_tn(h, ce.grad_logits);
  out.block_grads.resize(blocks.size());
  Matrix upstream = matmul_nt(ce.grad_logits, readout);
  for (std::size_t l = blocks.size(); l-- > 0;) {
    auto g = grad_block(caches[l], blocks[l], upstream);
    out.block_grads[l] = std::move(g.weights);
    upstream = std::move(g.input);
  }
  return out;
}

// End-to-end backprop MLP with the same blocks and one trainable readout;
// runs hidden_layers × epochs_per_block epochs.
inline ModelCheckpoint train_end_to_end_baseline(const Dataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  check_dataset(ds, cfg);
  Rng rng(derive_seed(cfg.seed, detail::kBaselineStream));
  ModelCheckpoint ckpt;
  ckpt.config = cfg;
  const std::size_t depth = cfg.hidden_layers();
  for (std::size_t l = 1; l <= depth; ++l)
    ckpt.blocks.push_back(detail::init_block(rng, cfg.layer_dims[l - 1], cfg.layer_dims[l], cfg));
  Matrix readout = gaussian_matrix(rng, cfg.layer_dims.back(), cfg.classes, 0.0,
                                   1.0 / std::sqrt(static_cast<double>(cfg.layer_dims.back())));
  std::vector<AdamState> block_adam;
  for (const auto& b : ckpt.blocks) block_adam.push_back(adam_for(b.weights, cfg.lr));
  AdamState readout_adam = adam_for(readout, cfg.lr);

  const std::size_t epochs = depth * cfg.epochs_per_block;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    EpochRecord rec{"baseline", depth, epoch};
    std::size_t counted = 0;
    std::size_t correct = 0;
    for (const auto& idx : batch_plan(ds.labels, cfg.batch_size, rng, cfg.batch_order)) {
      std::vector<std::uint16_t> y;
      for (auto i : idx) y.push_back(ds.labels[i]);
      const auto bp = backprop(ckpt.blocks, readout, gather_rows(ds.images, idx), y);
      detail::check_finite(bp.loss, "baseline", depth, epoch, idx);
      for (std::size_t l = 0; l < depth; ++l)
        adam_step(block_adam[l], ckpt.blocks[l].weights, bp.block_grads[l]);
      adam_step(readout_adam, readout, bp.readout_grad);
      rec.mean_ce += bp.loss;
      correct += bp.correct;
      ++counted;
    }
    rec.mean_ce /= static_cast<double>(counted);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    ckpt.log.push_back(rec);
  }
  ckpt.frozen_readouts.assign(depth, std::nullopt);
  ckpt.eval_readouts.assign(depth, std::nullopt);
  ckpt.eval_readouts.back() = std::move(readout);
  return ckpt;
}

inline const Matrix& eval_readout(const ModelCheckpoint& ckpt, std::size_t layer) {
  detail::check_layer(ckpt, layer);
  if (ckpt.eval_readouts.size() < layer || !ckpt.eval_readouts[layer - 1]) {
    throw Error(ErrorKind::state, "no evaluation readout at layer " + std::to_string(layer) +
                                      "; run train first");
  }
  return *ckpt.eval_readouts[layer - 1];
}

// Accuracy of argmax(h_layer(x)·R_layer) on the given inputs.
inline double accuracy_on(const ModelCheckpoint& ckpt, const Matrix& x, Labels y,
                          std::size_t layer) {
  const Matrix& readout = eval_readout(ckpt, layer);
  if (y.empty()) return 0.0;
  const Matrix logits = matmul(forward_through(ckpt.blocks, x, layer), readout);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (argmax(logits.row(i)) == y[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

inline double evaluate(const ModelCheckpoint& ckpt, const Dataset& ds, std::size_t layer) {
  return accuracy_on(ckpt, ds.images, ds.labels, layer);
}

// Per-batch ratio r at `layer` over one seeded pass of the data; skipped
// batches are omitted.
inline std::vector<double> layer_batch_ratios(const ModelCheckpoint& ckpt, const Dataset& ds,
                                              std::size_t layer, std::uint64_t seed) {
  detail::check_layer(ckpt, layer);
  const Matrix h = forward_through(ckpt.blocks, ds.images, layer);
  Rng rng(seed);
  GalConfig gal = ckpt.config.gal(layer);
  std::vector<double> ratios;
  for (const auto& idx : batch_plan(ds.labels, ckpt.config.batch_size, rng)) {
    std::vector<std::uint16_t> y;
    for (auto i : idx) y.push_back(ds.labels[i]);
    const auto res = gal_loss(gather_rows(h, idx), y, gal);
    if (!res.skipped) ratios.push_back(res.ratio);
  }
  return ratios;
}

}  // namespace gal
