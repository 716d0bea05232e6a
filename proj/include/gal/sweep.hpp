#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "json.hpp"

#include "gal/adversarial.hpp"

namespace gal {

struct SweepCell {
  std::size_t index = 0;  // row-major over (alpha, beta)
  double alpha = 0.0;
  double beta = 0.0;
  std::uint64_t seed = 0;
  double clean_accuracy = 0.0;
  double attacked_accuracy = 0.0;
  double final_ratio = 0.0;  // mean batch ratio of the last training epoch

  friend bool operator==(const SweepCell&, const SweepCell&) = default;
};

struct SweepGrid {
  std::size_t layer = 0;
  double eps = 0.0;
  std::vector<SweepCell> cells;
};

// Retrains `layer` from the base checkpoint's lower blocks with one (α, β)
// pair, fits its probe, and scores clean and FGSM accuracy on `test`.
inline SweepCell run_sweep_cell(const ModelCheckpoint& base, const Dataset& train,
                                const Dataset& test, std::size_t layer, double alpha,
                                double beta, double eps, std::size_t index) {
  ModelCheckpoint ckpt;
  ckpt.config = base.config;
  ckpt.config.seed = base.config.seed ^ static_cast<std::uint64_t>(index);
  ckpt.config.alpha[layer - 1] = alpha;
  ckpt.config.beta[layer - 1] = beta;
  ckpt.blocks = base.blocks;
  ckpt.frozen_readouts = base.frozen_readouts;
  train_layer(ckpt, train, layer);
  const double ratio = ckpt.log.back().mean_ratio;
  train_eval_readout(ckpt, train, layer, ckpt.config.eval_epochs);

  SweepCell cell{index, alpha, beta, ckpt.config.seed, 0.0, 0.0, ratio};
  cell.clean_accuracy = evaluate(ckpt, test, layer);
  Rng rng(cell.seed);  // fgsm draws nothing from it
  cell.attacked_accuracy = attacked_accuracy(ckpt, test, layer, AttackKind::fgsm, eps, rng, {});
  return cell;
}

// Cells run in row-major order; each depends only on its own index.
inline SweepGrid run_sweep(const ModelCheckpoint& base, const Dataset& train, const Dataset& test,
                           std::size_t layer, const std::vector<double>& alpha_grid,
                           const std::vector<double>& beta_grid, double eps) {
  if (alpha_grid.empty() || beta_grid.empty())
    throw Error(ErrorKind::config, "sweep grids must be non-empty");
  SweepGrid grid{layer, eps, {}};
  std::size_t index = 0;
  for (double a : alpha_grid)
    for (double b : beta_grid)
      grid.cells.push_back(run_sweep_cell(base, train, test, layer, a, b, eps, index++));
  return grid;
}

inline void write_jsonl(std::ostream& out, const SweepGrid& g) {
  for (const auto& c : g.cells) {
    out << nlohmann::json{{"kind", "sweep"},
                          {"layer", g.layer},
                          {"cell", c.index},
                          {"alpha", c.alpha},
                          {"beta", c.beta},
                          {"seed", c.seed},
                          {"eps", g.eps},
                          {"clean_accuracy", c.clean_accuracy},
                          {"fgsm_accuracy", c.attacked_accuracy},
                          {"final_ratio", c.final_ratio}}
               .dump()
        << '\n';
  }
}

}  // namespace gal
