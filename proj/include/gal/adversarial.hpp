#pragma once

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gal/trainer.hpp"

namespace gal {

enum class AttackKind { fgsm, gaussian };

inline const char* to_string(AttackKind k) { return k == AttackKind::fgsm ? "fgsm" : "gaussian"; }

inline AttackKind parse_attack_kind(std::string_view s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "gaussian") return AttackKind::gaussian;
  throw Error(ErrorKind::config, "attack kind must be fgsm or gaussian, got '" + std::string(s) + "'");
}

// ∇_x CE(h_layer(x)·R_layer, y), backpropagated through blocks 1..layer.
inline Matrix input_gradient(const ModelCheckpoint& ckpt, std::size_t layer, const Matrix& x,
                             Labels y) {
  const Matrix& readout = eval_readout(ckpt, layer);
  std::vector<BlockCache> caches;
  Matrix h = x;
  for (std::size_t l = 0; l < layer; ++l) {
    auto fwd = forward_block(ckpt.blocks[l], h);
    h = std::move(fwd.output);
    caches.push_back(std::move(fwd.cache));
  }
  const auto ce = softmax_cross_entropy(matmul(h, readout), y);
  Matrix upstream = matmul_nt(ce.grad_logits, readout);
  for (std::size_t l = layer; l-- > 0;)
    upstream = grad_block_input(caches[l], ckpt.blocks[l], upstream);
  return upstream;
}

inline void clip_pixels(Matrix& x) {
  for (double& v : x.flat()) v = std::clamp(v, -1.0, 1.0);
}

inline Matrix fgsm_perturb(const ModelCheckpoint& ckpt, std::size_t layer, const Matrix& x,
                           Labels y, double eps, bool clip = true) {
  if (!(eps >= 0)) throw Error(ErrorKind::config, "fgsm: eps must be >= 0");
  detail::check_layer(ckpt, layer);
  if (eps == 0) return x;
  const Matrix grad = input_gradient(ckpt, layer, x, y);
  Matrix out = x;
  auto o = out.flat();
  auto g = grad.flat();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double s = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
    o[i] += eps * s;
  }
  if (clip) clip_pixels(out);
  return out;
}

inline Matrix gaussian_perturb(const Matrix& x, double eps, Rng& rng, bool clip = true) {
  if (!(eps >= 0)) throw Error(ErrorKind::config, "gaussian: eps must be >= 0");
  Matrix out = x;
  if (eps == 0) return out;
  for (double& v : out.flat()) v += eps * rng.normal();
  if (clip) clip_pixels(out);
  return out;
}

struct LayerCurve {
  std::size_t layer = 0;
  std::vector<double> accuracy;  // aligned with AttackReport::epsilons

  friend bool operator==(const LayerCurve&, const LayerCurve&) = default;
};

struct AttackReport {
  AttackKind kind = AttackKind::fgsm;
  std::vector<double> epsilons;
  std::vector<LayerCurve> layers;
  std::uint64_t seed = 0;
  std::size_t samples = 0;

  friend bool operator==(const AttackReport&, const AttackReport&) = default;
};

struct SweepOptions {
  bool clip = true;
  std::size_t chunk = 500;  // samples per gradient pass
  std::vector<std::size_t> layers;  // empty: every layer with an eval readout
};

// Accuracy of one layer under one attack strength over the whole dataset.
inline double attacked_accuracy(const ModelCheckpoint& ckpt, const Dataset& ds, std::size_t layer,
                                AttackKind kind, double eps, Rng& rng, const SweepOptions& opt) {
  std::size_t correct = 0;
  const Matrix& readout = eval_readout(ckpt, layer);
  for (std::size_t start = 0; start < ds.size(); start += opt.chunk) {
    const std::size_t end = std::min(ds.size(), start + opt.chunk);
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    const Matrix x = gather_rows(ds.images, idx);
    const Labels y(ds.labels.data() + start, end - start);
    const Matrix x_adv = kind == AttackKind::fgsm
                             ? fgsm_perturb(ckpt, layer, x, y, eps, opt.clip)
                             : gaussian_perturb(x, eps, rng, opt.clip);
    const Matrix logits = matmul(forward_through(ckpt.blocks, x_adv, layer), readout);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (argmax(logits.row(i)) == y[i]) ++correct;
  }
  return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

// Every (layer, ε) cell draws noise from its own derived stream, so cells do
// not depend on evaluation order.
inline AttackReport robustness_sweep(const ModelCheckpoint& ckpt, const Dataset& ds,
                                     AttackKind kind, const std::vector<double>& epsilons,
                                     std::uint64_t seed, const SweepOptions& opt = {}) {
  AttackReport report;
  report.kind = kind;
  report.epsilons = epsilons;
  report.seed = seed;
  report.samples = ds.size();
  std::vector<std::size_t> layers = opt.layers;
  if (layers.empty()) {
    for (std::size_t l = 1; l <= ckpt.layers(); ++l)
      if (l <= ckpt.eval_readouts.size() && ckpt.eval_readouts[l - 1]) layers.push_back(l);
  }
  if (layers.empty()) {
    throw Error(ErrorKind::state, "checkpoint has no evaluation readouts; run train first");
  }
  for (std::size_t layer : layers) {
    LayerCurve curve{layer, {}};
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
      Rng rng(derive_seed(seed, layer * 100003 + e));
      curve.accuracy.push_back(attacked_accuracy(ckpt, ds, layer, kind, epsilons[e], rng, opt));
    }
    report.layers.push_back(std::move(curve));
  }
  return report;
}

// One JSON object per (layer, ε).
inline void write_jsonl(std::ostream& out, const AttackReport& r, const std::string& model = "gal") {
  for (const auto& curve : r.layers) {
    for (std::size_t e = 0; e < r.epsilons.size(); ++e) {
      nlohmann::json rec = {{"kind", to_string(r.kind)}, {"model", model},
                            {"layer", curve.layer},      {"eps", r.epsilons[e]},
                            {"accuracy", curve.accuracy[e]}, {"seed", r.seed},
                            {"samples", r.samples}};
      out << rec.dump() << '\n';
    }
  }
}

}  // namespace gal
