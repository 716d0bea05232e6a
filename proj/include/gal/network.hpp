#pragma once

#include <cmath>
#include <vector>

#include "gal/matrix.hpp"

namespace gal {

// One block: z = h_prev·W, u = layernorm(z) (no affine), h = tanh(u).
struct LayerBlock {
  Matrix weights;  // N_{l-1} × N_l
  bool use_layernorm = true;
  double ln_eps = 1e-5;

  std::size_t in_dim() const noexcept { return weights.rows(); }
  std::size_t out_dim() const noexcept { return weights.cols(); }

  friend bool operator==(const LayerBlock&, const LayerBlock&) = default;
};

struct BlockCache {
  Matrix input;                 // h_{l-1}, B × N_{l-1}
  Matrix pre_norm;              // z
  Matrix normalized;            // u
  Matrix output;                // h_l
  std::vector<double> mean;     // per-row LN mean
  std::vector<double> inv_std;  // per-row 1/sqrt(var + eps)
  bool use_layernorm = true;
};

struct BlockForward {
  Matrix output;
  BlockCache cache;
};

inline BlockForward forward_block(const LayerBlock& block, const Matrix& h_prev) {
  if (h_prev.cols() != block.weights.rows()) {
    throw Error(ErrorKind::dimension, "forward_block: input " + h_prev.shape() +
                                          " does not match weights " + block.weights.shape());
  }
  BlockCache cache;
  cache.use_layernorm = block.use_layernorm;
  cache.input = h_prev;
  cache.pre_norm = matmul(h_prev, block.weights);
  const std::size_t batch = cache.pre_norm.rows();
  const std::size_t width = cache.pre_norm.cols();
  cache.normalized = cache.pre_norm;
  if (block.use_layernorm) {
    cache.mean.resize(batch);
    cache.inv_std.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      auto z = cache.pre_norm.row(i);
      double mean = 0.0;
      for (double v : z) mean += v;
      mean /= static_cast<double>(width);
      double var = 0.0;
      for (double v : z) var += (v - mean) * (v - mean);
      var /= static_cast<double>(width);
      const double inv_std = 1.0 / std::sqrt(var + block.ln_eps);
      cache.mean[i] = mean;
      cache.inv_std[i] = inv_std;
      auto u = cache.normalized.row(i);
      for (std::size_t j = 0; j < width; ++j) u[j] = (z[j] - mean) * inv_std;
    }
  }
  cache.output = cache.normalized;
  for (double& v : cache.output.flat()) v = std::tanh(v);
  Matrix out = cache.output;
  return {std::move(out), std::move(cache)};
}

// dL/dz from dL/dh through tanh and the layer-norm Jacobian:
// dz = inv_std · (du − mean(du) − u·mean(du ⊙ u)) per row.
inline Matrix grad_pre_norm(const BlockCache& cache, const Matrix& upstream) {
  if (upstream.rows() != cache.output.rows() || upstream.cols() != cache.output.cols()) {
    throw Error(ErrorKind::dimension, "block backward: upstream " + upstream.shape() +
                                          " does not match output " + cache.output.shape());
  }
  Matrix du = upstream;
  {
    auto d = du.flat();
    auto h = cache.output.flat();
    for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 1.0 - h[k] * h[k];
  }
  if (!cache.use_layernorm) return du;
  const std::size_t width = du.cols();
  Matrix dz(du.rows(), width);
  for (std::size_t i = 0; i < du.rows(); ++i) {
    auto d = du.row(i);
    auto u = cache.normalized.row(i);
    double mean_d = 0.0;
    double mean_du = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      mean_d += d[j];
      mean_du += d[j] * u[j];
    }
    mean_d /= static_cast<double>(width);
    mean_du /= static_cast<double>(width);
    auto out = dz.row(i);
    for (std::size_t j = 0; j < width; ++j)
      out[j] = cache.inv_std[i] * (d[j] - mean_d - u[j] * mean_du);
  }
  return dz;
}

inline Matrix grad_block_params(const BlockCache& cache, const Matrix& upstream) {
  return matmul_tn(cache.input, grad_pre_norm(cache, upstream));
}

inline Matrix grad_block_input(const BlockCache& cache, const LayerBlock& block,
                               const Matrix& upstream) {
  return matmul_nt(grad_pre_norm(cache, upstream), block.weights);
}

struct BlockGrads {
  Matrix weights;
  Matrix input;
};

// Both gradients sharing one pass through the nonlinearity.
inline BlockGrads grad_block(const BlockCache& cache, const LayerBlock& block,
                             const Matrix& upstream) {
  const Matrix dz = grad_pre_norm(cache, upstream);
  return {matmul_tn(cache.input, dz), matmul_nt(dz, block.weights)};
}

// Output of the first `depth` blocks (all blocks when depth exceeds the count).
inline Matrix forward_through(const std::vector<LayerBlock>& blocks, const Matrix& x,
                              std::size_t depth) {
  Matrix h = x;
  for (std::size_t l = 0; l < depth && l < blocks.size(); ++l)
    h = forward_block(blocks[l], h).output;
  return h;
}

}  // namespace gal
