#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "gal/bytes.hpp"
#include "gal/checkpoint.hpp"
#include "gal/eigen.hpp"
#include "gal/trainer.hpp"

namespace gal {

// Hebbian model over one layer's representations. Stores the class sums
// s^μ = Σ_a h_a^(μ); the coupling J = (1/N) Σ_μ s^μ s^μᵀ is only formed on request.
struct HopfieldModel {
  std::size_t layer = 0;
  std::size_t width = 0;              // N
  Matrix class_sums;                  // C × N, row μ = s^μ
  std::size_t samples_per_class = 0;  // N_μ
  std::vector<std::size_t> sample_indices;

  Matrix coupling() const {
    Matrix j = matmul_tn(class_sums, class_sums);
    const double inv_n = 1.0 / static_cast<double>(width);
    for (double& v : j.flat()) v *= inv_n;
    return j;
  }
};

// Model from explicit patterns (rows) grouped by label.
inline HopfieldModel hopfield_from_patterns(const Matrix& patterns, Labels labels,
                                            std::size_t classes, std::size_t layer = 0) {
  if (patterns.rows() != labels.size()) {
    throw Error(ErrorKind::dimension, "hopfield: " + std::to_string(patterns.rows()) +
                                          " patterns vs " + std::to_string(labels.size()) +
                                          " labels");
  }
  HopfieldModel m;
  m.layer = layer;
  m.width = patterns.cols();
  m.class_sums = Matrix(classes, patterns.cols());
  for (std::size_t i = 0; i < patterns.rows(); ++i) {
    if (labels[i] >= classes) {
      throw Error(ErrorKind::index, "hopfield: label " + std::to_string(labels[i]) +
                                        " outside " + std::to_string(classes) + " classes");
    }
    auto s = m.class_sums.row(labels[i]);
    auto h = patterns.row(i);
    for (std::size_t k = 0; k < h.size(); ++k) s[k] += h[k];
  }
  return m;
}

// Samples N_μ training items per class with a seeded shuffle, maps them to
// `layer`, and accumulates the class sums.
inline HopfieldModel build_hopfield(const ModelCheckpoint& ckpt, const Dataset& train,
                                    std::size_t layer, std::size_t samples_per_class,
                                    std::uint64_t seed) {
  detail::check_layer(ckpt, layer);
  if (samples_per_class < 1) throw Error(ErrorKind::config, "N_mu must be >= 1");
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < train.classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < train.size(); ++i)
      if (train.labels[i] == c) members.push_back(i);
    if (members.size() < samples_per_class) {
      throw Error(ErrorKind::data, "class " + std::to_string(c) + " has " +
                                       std::to_string(members.size()) + " samples, need " +
                                       std::to_string(samples_per_class));
    }
    rng.shuffle(std::span<std::size_t>(members));
    chosen.insert(chosen.end(), members.begin(),
                  members.begin() + static_cast<long>(samples_per_class));
  }
  const Matrix h = forward_through(ckpt.blocks, gather_rows(train.images, chosen), layer);
  std::vector<std::uint16_t> labels;
  for (auto i : chosen) labels.push_back(train.labels[i]);
  HopfieldModel m = hopfield_from_patterns(h, labels, train.classes, layer);
  m.samples_per_class = samples_per_class;
  m.sample_indices = std::move(chosen);
  return m;
}

// m^μ = (1/N) s^μ·h.
inline std::vector<double> overlaps(const HopfieldModel& model, std::span<const double> h) {
  if (h.size() != model.width) {
    throw Error(ErrorKind::dimension, "overlaps: vector of length " + std::to_string(h.size()) +
                                          " for width " + std::to_string(model.width));
  }
  std::vector<double> m(model.class_sums.rows());
  const double inv_n = 1.0 / static_cast<double>(model.width);
  for (std::size_t mu = 0; mu < m.size(); ++mu) m[mu] = inv_n * dot(model.class_sums.row(mu), h);
  return m;
}

// E = −hᵀJh = −(1/N) Σ_μ (s^μ·h)², O(NC) without forming J.
inline double energy(const HopfieldModel& model, std::span<const double> h) {
  if (h.size() != model.width) {
    throw Error(ErrorKind::dimension, "energy: vector of length " + std::to_string(h.size()) +
                                          " for width " + std::to_string(model.width));
  }
  double acc = 0.0;
  for (std::size_t mu = 0; mu < model.class_sums.rows(); ++mu) {
    const double proj = dot(model.class_sums.row(mu), h);
    acc += proj * proj;
  }
  return -acc / static_cast<double>(model.width);
}

struct EnergyRecord {
  std::size_t sample = 0;
  std::uint16_t label = 0;
  std::size_t layer = 0;
  double energy = 0.0;
  double l2_norm = 0.0;
  double energy_normalized = 0.0;
  double norm_normalized = 0.0;
};

// Min-max scaling to [0, 1]; a constant input maps to 0.
inline std::vector<double> min_max_normalize(std::span<const double> xs) {
  std::vector<double> out(xs.size(), 0.0);
  if (xs.empty()) return out;
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const double range = *hi - *lo;
  if (range > 0)
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - *lo) / range;
  return out;
}

inline std::vector<EnergyRecord> energy_scatter(const ModelCheckpoint& ckpt, const Dataset& test,
                                                std::size_t layer,
                                                std::span<const std::uint16_t> classes,
                                                const HopfieldModel& model) {
  if (classes.empty()) throw Error(ErrorKind::config, "energy_scatter: empty class selection");
  if (model.layer != layer) {
    throw Error(ErrorKind::config, "energy_scatter: model built at layer " +
                                       std::to_string(model.layer) + ", requested " +
                                       std::to_string(layer));
  }
  detail::check_layer(ckpt, layer);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (std::find(classes.begin(), classes.end(), test.labels[i]) != classes.end()) idx.push_back(i);
  const Matrix h = forward_through(ckpt.blocks, gather_rows(test.images, idx), layer);
  std::vector<EnergyRecord> out;
  std::vector<double> energies;
  std::vector<double> norms;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    EnergyRecord rec;
    rec.sample = idx[r];
    rec.label = test.labels[idx[r]];
    rec.layer = layer;
    rec.energy = energy(model, h.row(r));
    rec.l2_norm = std::sqrt(dot(h.row(r), h.row(r)));
    energies.push_back(rec.energy);
    norms.push_back(rec.l2_norm);
    out.push_back(rec);
  }
  const auto en = min_max_normalize(energies);
  const auto nn = min_max_normalize(norms);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].energy_normalized = en[r];
    out[r].norm_normalized = nn[r];
  }
  return out;
}

// |μ₁ − μ₂| / sqrt(σ₁² + σ₂²) with population variances.
inline double fisher_separation(std::span<const double> a, std::span<const double> b) {
  auto moments = [](std::span<const double> xs) {
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::pair{mean, var / static_cast<double>(xs.size())};
  };
  if (a.empty() || b.empty()) throw Error(ErrorKind::analysis, "fisher_separation: empty group");
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double denom = std::sqrt(va + vb);
  if (denom == 0) return ma == mb ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(ma - mb) / denom;
}

// Fisher separation of normalized energies between two labels of a scatter.
inline double energy_separation(std::span<const EnergyRecord> records, std::uint16_t a,
                                std::uint16_t b) {
  std::vector<double> ea, eb;
  for (const auto& r : records) {
    if (r.label == a) ea.push_back(r.energy_normalized);
    if (r.label == b) eb.push_back(r.energy_normalized);
  }
  return fisher_separation(ea, eb);
}

struct SpectrumFit {
  std::vector<double> eigenvalues;  // descending, after dropping < 1e-12·λ₁
  std::size_t breakpoint = 0;       // last rank (1-based) of the head segment
  double head_gamma = 0.0;
  double tail_gamma = 0.0;
  double head_intercept = 0.0;  // natural-log intercepts of the fitted lines
  double tail_intercept = 0.0;
  double head_residual = 0.0;   // sum of squared residuals in log space
  double tail_residual = 0.0;
};

namespace detail {

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;
};

inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    f.residual += r * r;
  }
  return f;
}

}  // namespace detail

inline constexpr std::size_t kMinSpectrumLength = 12;
inline constexpr std::size_t kMinSegment = 5;

// Two independent least-squares lines on (log n, log λ_n): head = ranks
// 1..b, tail = ranks b+1..K, with b ∈ [5, K−5] minimizing the summed squared
// residual (first minimum wins). Gammas are the negated slopes.
inline SpectrumFit fit_power_law_segments(std::vector<double> eigenvalues) {
  std::sort(eigenvalues.begin(), eigenvalues.end(), std::greater<>());
  if (eigenvalues.empty() || !(eigenvalues.front() > 0)) {
    throw Error(ErrorKind::analysis, "spectrum has no positive eigenvalues");
  }
  const double floor = 1e-12 * eigenvalues.front();
  std::erase_if(eigenvalues, [floor](double v) { return !(v >= floor); });
  const std::size_t k = eigenvalues.size();
  if (k < kMinSpectrumLength) {
    throw Error(ErrorKind::analysis, "only " + std::to_string(k) +
                                         " usable eigenvalues; need at least " +
                                         std::to_string(kMinSpectrumLength));
  }
  std::vector<double> lx(k), ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    lx[i] = std::log(static_cast<double>(i + 1));
    ly[i] = std::log(eigenvalues[i]);
  }
  SpectrumFit best;
  double best_total = std::numeric_limits<double>::infinity();
  const std::span<const double> xs(lx), ys(ly);
  for (std::size_t b = kMinSegment; b + kMinSegment <= k; ++b) {
    const auto head = detail::fit_line(xs.first(b), ys.first(b));
    const auto tail = detail::fit_line(xs.subspan(b), ys.subspan(b));
    const double total = head.residual + tail.residual;
    if (total < best_total) {
      best_total = total;
      best.breakpoint = b;
      best.head_gamma = -head.slope;
      best.tail_gamma = -tail.slope;
      best.head_intercept = head.intercept;
      best.tail_intercept = tail.intercept;
      best.head_residual = head.residual;
      best.tail_residual = tail.residual;
    }
  }
  best.eigenvalues = std::move(eigenvalues);
  return best;
}

// Population covariance (1/M) of centered rows.
inline Matrix feature_covariance(const Matrix& features) {
  const std::size_t m = features.rows();
  const std::size_t n = features.cols();
  std::vector<double> mean(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) mean[k] += features(i, k);
  for (double& v : mean) v /= static_cast<double>(m);
  Matrix centered = features;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n; ++k) centered(i, k) -= mean[k];
  Matrix cov = matmul_tn(centered, centered);
  for (double& v : cov.flat()) v /= static_cast<double>(m);
  return cov;
}

inline SpectrumFit spectrum_fit(const Matrix& features) {
  if (features.rows() < 2) throw Error(ErrorKind::analysis, "spectrum_fit needs M >= 2 samples");
  return fit_power_law_segments(sym_eigenvalues(feature_covariance(features)));
}

inline constexpr char kFeatureMagic[8] = {'G', 'A', 'L', 'F', 'E', 'A', 'T', '1'};

struct FeatureExport {
  Matrix features;
  std::vector<std::uint16_t> labels;
  std::uint32_t layer = 0;

  friend bool operator==(const FeatureExport&, const FeatureExport&) = default;
};

// "GALFEAT1" | u32 M, N, layer | f64 M×N row-major | u16 labels, little-endian.
inline std::vector<std::uint8_t> encode_features(const FeatureExport& f) {
  std::vector<std::uint8_t> out(std::begin(kFeatureMagic), std::end(kFeatureMagic));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.features.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(f.features.cols()));
  detail::put_le<std::uint32_t>(out, f.layer);
  for (double v : f.features.flat()) detail::put_le<double>(out, v);
  for (auto y : f.labels) detail::put_le<std::uint16_t>(out, y);
  return out;
}

inline FeatureExport decode_features(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  const auto magic = in.take(sizeof(kFeatureMagic));
  if (!std::equal(magic.begin(), magic.end(), std::begin(kFeatureMagic))) {
    throw Error(ErrorKind::format, "bad feature-file magic at byte offset 0");
  }
  FeatureExport f;
  const auto m = in.get<std::uint32_t>();
  const auto n = in.get<std::uint32_t>();
  f.layer = in.get<std::uint32_t>();
  f.features = Matrix(m, n);
  for (double& v : f.features.flat()) v = in.get<double>();
  f.labels.resize(m);
  for (auto& y : f.labels) y = in.get<std::uint16_t>();
  if (!in.done()) {
    throw Error(ErrorKind::format, "trailing bytes at byte offset " + std::to_string(in.offset()));
  }
  return f;
}

inline FeatureExport layer_features(const ModelCheckpoint& ckpt, const Dataset& ds,
                                    std::size_t layer) {
  detail::check_layer(ckpt, layer);
  return {forward_through(ckpt.blocks, ds.images, layer), ds.labels,
          static_cast<std::uint32_t>(layer)};
}

inline void export_features(const ModelCheckpoint& ckpt, const Dataset& ds, std::size_t layer,
                            const std::filesystem::path& path) {
  try {
    write_file_atomic(path, encode_features(layer_features(ckpt, ds, layer)));
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorKind::io, "cannot write " + path.string() + ": " + e.what());
  }
}

inline FeatureExport import_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return decode_features(bytes);
}

inline void write_jsonl(std::ostream& out, std::span<const EnergyRecord> records) {
  for (const auto& r : records) {
    out << nlohmann::json{{"kind", "energy"},
                          {"layer", r.layer},
                          {"sample", r.sample},
                          {"label", r.label},
                          {"energy", r.energy},
                          {"l2_norm", r.l2_norm},
                          {"energy_normalized", r.energy_normalized},
                          {"norm_normalized", r.norm_normalized}}
               .dump()
        << '\n';
  }
}

inline nlohmann::json to_json(const SpectrumFit& f, std::size_t layer) {
  return {{"kind", "spectrum"},
          {"layer", layer},
          {"breakpoint", f.breakpoint},
          {"head_gamma", f.head_gamma},
          {"tail_gamma", f.tail_gamma},
          {"head_intercept", f.head_intercept},
          {"tail_intercept", f.tail_intercept},
          {"head_residual", f.head_residual},
          {"tail_residual", f.tail_residual},
          {"eigenvalues", f.eigenvalues}};
}

}  // namespace gal
