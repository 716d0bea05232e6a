#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "gal/matrix.hpp"
#include "gal/rng.hpp"

namespace gal {

using Labels = std::span<const std::uint16_t>;

enum class RatioMode { mean, total };
enum class ReadoutScale { unit, inv_sqrt };

struct ReadoutHead {
  Matrix weights;  // N × C
  bool frozen = true;
};

// Gaussian readout: N(0, 1) entries, or N(0, 1/N) with inv_sqrt.
inline ReadoutHead random_readout(Rng& rng, std::size_t width, std::size_t classes,
                                  ReadoutScale scale = ReadoutScale::unit) {
  const double std =
      scale == ReadoutScale::unit ? 1.0 : 1.0 / std::sqrt(static_cast<double>(width));
  return {gaussian_matrix(rng, width, classes, 0.0, std), true};
}

struct GalConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double eps_guard = 1e-8;
  RatioMode ratio_mode = RatioMode::mean;
};

struct SoftmaxCe {
  double loss = 0.0;
  Matrix grad_logits;  // (softmax − onehot)/B
  std::size_t correct = 0;
};

// Mean cross-entropy over rows of logits; softmax with max subtraction.
inline SoftmaxCe softmax_cross_entropy(const Matrix& logits, Labels y) {
  if (logits.rows() != y.size()) {
    throw Error(ErrorKind::dimension, "cross_entropy: " + std::to_string(logits.rows()) +
                                          " logit rows vs " + std::to_string(y.size()) +
                                          " labels");
  }
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  SoftmaxCe out;
  out.grad_logits = Matrix(batch, classes);
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    if (y[i] >= classes) {
      throw Error(ErrorKind::index, "cross_entropy: label " + std::to_string(y[i]) +
                                        " outside " + std::to_string(classes) + " classes");
    }
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    auto g = out.grad_logits.row(i);
    for (std::size_t c = 0; c < classes; ++c) {
      g[c] = std::exp(z[c] - zmax);
      sum += g[c];
    }
    out.loss += (std::log(sum) - (z[y[i]] - zmax)) * inv_b;
    for (std::size_t c = 0; c < classes; ++c) g[c] = g[c] / sum * inv_b;
    g[y[i]] -= inv_b;
    if (argmax(z) == y[i]) ++out.correct;
  }
  return out;
}

struct CeResult {
  double loss = 0.0;
  Matrix grad_h;
  Matrix grad_readout;
};

inline CeResult cross_entropy(const Matrix& h, const ReadoutHead& head, Labels y) {
  if (h.cols() != head.weights.rows()) {
    throw Error(ErrorKind::dimension, "cross_entropy: features " + h.shape() +
                                          " vs readout " + head.weights.shape());
  }
  const auto ce = softmax_cross_entropy(matmul(h, head.weights), y);
  CeResult out;
  out.loss = ce.loss;
  out.grad_h = matmul_nt(ce.grad_logits, head.weights);
  if (!head.frozen) out.grad_readout = matmul_tn(h, ce.grad_logits);
  return out;
}

struct PairDistances {
  double between = 0.0;  // d_F: different-class pairs
  double within = 0.0;   // d_B: same-class pairs
  std::size_t between_pairs = 0;
  std::size_t within_pairs = 0;
};

// Squared Euclidean distances summed over unordered pairs i<j.
inline PairDistances gal_distances(const Matrix& h, Labels y) {
  if (h.rows() != y.size()) {
    throw Error(ErrorKind::dimension, "gal_distances: " + std::to_string(h.rows()) +
                                          " rows vs " + std::to_string(y.size()) + " labels");
  }
  PairDistances d;
  const std::size_t batch = h.rows();
  for (std::size_t i = 0; i < batch; ++i) {
    auto hi = h.row(i);
    for (std::size_t j = i + 1; j < batch; ++j) {
      auto hj = h.row(j);
      double dist = 0.0;
      for (std::size_t k = 0; k < hi.size(); ++k) {
        const double diff = hi[k] - hj[k];
        dist += diff * diff;
      }
      if (y[i] == y[j]) {
        d.within += dist;
        ++d.within_pairs;
      } else {
        d.between += dist;
        ++d.between_pairs;
      }
    }
  }
  return d;
}

struct GalResult {
  double loss = 0.0;
  double ratio = 0.0;
  Matrix grad_h;
  bool skipped = false;
};

// |r − α| with r = d_F/d_B, optionally pair-count normalized. Uses the
// subgradient sign(0) = 0 at the kink.
inline GalResult gal_loss(const Matrix& h, Labels y, const GalConfig& cfg) {
  const auto d = gal_distances(h, y);
  GalResult out;
  out.grad_h = Matrix(h.rows(), h.cols());
  if (d.between_pairs == 0 || d.within_pairs == 0 || d.within < cfg.eps_guard) {
    out.skipped = true;
    return out;
  }
  const double scale = cfg.ratio_mode == RatioMode::mean
                           ? static_cast<double>(d.within_pairs) /
                                 static_cast<double>(d.between_pairs)
                           : 1.0;
  out.ratio = scale * d.between / d.within;
  const double diff = out.ratio - cfg.alpha;
  out.loss = std::abs(diff);
  const double sign = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
  if (sign == 0.0) return out;

  // For unordered sums D = Σ_{i<j} w_ij‖h_i − h_j‖²,
  // ∂D/∂h_i = 2 Σ_{j≠i} w_ij (h_i − h_j), evaluated via class sums.
  // r = s·F/W ⇒ ∂r = s(∂F·W − F·∂W)/W² = (s/W)∂F − (r/W)∂W.
  const std::size_t batch = h.rows();
  const std::size_t width = h.cols();
  std::vector<double> total_sum(width, 0.0);
  std::vector<std::vector<double>> class_sum;
  std::vector<std::size_t> class_count;
  std::vector<std::uint16_t> class_ids;
  std::vector<std::size_t> slot(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    auto it = std::find(class_ids.begin(), class_ids.end(), y[i]);
    std::size_t c;
    if (it == class_ids.end()) {
      c = class_ids.size();
      class_ids.push_back(y[i]);
      class_sum.emplace_back(width, 0.0);
      class_count.push_back(0);
    } else {
      c = static_cast<std::size_t>(it - class_ids.begin());
    }
    slot[i] = c;
    ++class_count[c];
    auto hi = h.row(i);
    for (std::size_t k = 0; k < width; ++k) {
      total_sum[k] += hi[k];
      class_sum[c][k] += hi[k];
    }
  }
  const double coef_between = sign * scale / d.within;
  const double coef_within = sign * out.ratio / d.within;
  const double b = static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    auto hi = h.row(i);
    auto g = out.grad_h.row(i);
    const double nc = static_cast<double>(class_count[slot[i]]);
    const auto& sc = class_sum[slot[i]];
    for (std::size_t k = 0; k < width; ++k) {
      const double grad_within = 2.0 * (nc * hi[k] - sc[k]);
      const double grad_all = 2.0 * (b * hi[k] - total_sum[k]);
      const double grad_between = grad_all - grad_within;
      g[k] = coef_between * grad_between - coef_within * grad_within;
    }
  }
  return out;
}

struct LocalLossParts {
  double ce = 0.0;
  double gal = 0.0;
  double ratio = 0.0;
  bool gal_skipped = false;
};

struct LocalLoss {
  double loss = 0.0;
  Matrix grad_h;
  LocalLossParts parts;
};

// β·CE(h·R, y) + GAL(h, y).
inline LocalLoss local_loss(const Matrix& h, Labels y, const ReadoutHead& head,
                            const GalConfig& cfg) {
  ReadoutHead frozen{head.weights, true};
  const auto ce = cross_entropy(h, frozen, y);
  const auto gal = gal_loss(h, y, cfg);
  LocalLoss out;
  out.parts = {ce.loss, gal.loss, gal.ratio, gal.skipped};
  out.loss = cfg.beta * ce.loss + gal.loss;
  out.grad_h = cfg.beta * ce.grad_h + gal.grad_h;
  return out;
}

}  // namespace gal
