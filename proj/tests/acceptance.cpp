// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the number
// of failed criteria (0 when all pass).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fd_oracle.hpp"
#include "gal/adversarial.hpp"
#include "gal/analysis.hpp"
#include "gal/checkpoint.hpp"

namespace fs = std::filesystem;
using gal::Matrix;

namespace {

// Pinned tolerances and thresholds.
constexpr int kGradInstances = 24;
constexpr double kGradTol = 1e-5;
constexpr double kOracleTol = 1e-12;
constexpr double kLayer3MinAccuracy = 0.90;
constexpr double kOrderSlack = 0.02;
constexpr double kRatioBand = 0.10;
constexpr double kRatioFraction = 0.80;
constexpr double kRobustGap = 0.05;
constexpr double kIdentityTol = 1e-10;
constexpr std::size_t kIdentityVectors = 1000;
constexpr std::size_t kHopfieldSamples = 100;
constexpr double kSyntheticGammaTol = 0.01;
constexpr double kTwoRegimeGammaTol = 0.1;
constexpr std::size_t kBreakpointTol = 3;

struct Settings {
  fs::path data;
  std::size_t train_samples = 10000;
  std::size_t test_samples = 2000;
  std::size_t seeds = 3;
};

int failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("%s criterion %d: %s | %s\n", pass ? "PASS" : "FAIL", id, title.c_str(),
              detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "[acceptance] %s\n", msg.c_str());
}

// ---------------------------------------------------------------- criterion 1

// Batch with at least two samples in some class and at least two classes.
std::vector<std::uint16_t> random_labels(gal::Rng& rng, std::size_t batch, std::size_t classes) {
  std::vector<std::uint16_t> y(batch);
  for (auto& v : y) v = static_cast<std::uint16_t>(rng.below(classes));
  y[0] = 0;
  y[1] = 0;
  y[2] = 1;
  return y;
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  gal::Rng rng(20240601);
  double worst_params = 0, worst_input = 0;
  int checked = 0;
  for (int inst = 0; inst < kGradInstances; ++inst) {
    const std::size_t depth = 1 + rng.below(3);
    const std::size_t classes = 2 + rng.below(3);
    const std::size_t batch = 4 + rng.below(5);
    // LayerNorm over two units maps every input to (±1, ∓1); its gradient is
    // ~0 and relative error is meaningless there, so hidden widths start at 3.
    std::vector<std::size_t> dims{2 + rng.below(9)};
    for (std::size_t l = 0; l < depth; ++l) dims.push_back(3 + rng.below(8));

    gal::ModelCheckpoint ckpt;
    ckpt.config.classes = classes;
    for (std::size_t l = 0; l < depth; ++l) {
      ckpt.blocks.push_back(
          {gal::gaussian_matrix(rng, dims[l], dims[l + 1], 0, 1.0 / std::sqrt(double(dims[l]))),
           true, 1e-5});
      ckpt.eval_readouts.push_back(gal::gaussian_matrix(rng, dims[l + 1], classes, 0, 1));
    }
    const Matrix x = gal::gaussian_matrix(rng, batch, dims[0], 0, 0.6);
    const auto y = random_labels(rng, batch, classes);

    // Local loss of the top block w.r.t. its weights.
    auto& block = ckpt.blocks.back();
    const Matrix h_prev = gal::forward_through(ckpt.blocks, x, depth - 1);
    const gal::ReadoutHead head{gal::gaussian_matrix(rng, dims[depth], classes, 0, 1), true};
    gal::GalConfig cfg;
    cfg.beta = 2.0 * rng.uniform();
    const auto fwd = gal::forward_block(block, h_prev);
    const double r = gal::gal_loss(fwd.output, y, cfg).ratio;
    // Keep the target away from the |r − α| kink so central differences are valid.
    cfg.alpha = r * (rng.uniform() < 0.5 ? 0.5 + 0.4 * rng.uniform() : 1.1 + 0.9 * rng.uniform());
    const auto loss = gal::local_loss(fwd.output, y, head, cfg);
    const Matrix analytic = gal::grad_block_params(fwd.cache, loss.grad_h);
    const Matrix numeric = gal::testing::numeric_gradient(
        [&] { return gal::local_loss(gal::forward_block(block, h_prev).output, y, head, cfg).loss; },
        block.weights);
    worst_params = std::max(worst_params, gal::testing::max_relative_error(analytic, numeric));

    // CE at the top probe w.r.t. input pixels through every block.
    Matrix xv = x;
    const Matrix& probe = *ckpt.eval_readouts.back();
    const Matrix g_in = gal::input_gradient(ckpt, depth, xv, y);
    const Matrix n_in = gal::testing::numeric_gradient(
        [&] {
          return gal::softmax_cross_entropy(
                     gal::matmul(gal::forward_through(ckpt.blocks, xv, depth), probe), y)
              .loss;
        },
        xv);
    worst_input = std::max(worst_input, gal::testing::max_relative_error(g_in, n_in));
    ++checked;
  }
  const double secs = seconds_since(t0);
  report(1, worst_params < kGradTol && worst_input < kGradTol && checked >= 20,
         "gradient correctness",
         std::to_string(checked) + " instances, max rel err weights " + fmt(worst_params * 1e6, 3) +
             "e-6, inputs " + fmt(worst_input * 1e6, 3) + "e-6 (tol 1e-5), " + fmt(secs, 1) + " s");
}

// ---------------------------------------------------------------- criterion 2

// Independent oracle: every ordered pair visited, then halved.
gal::PairDistances brute_force_distances(const Matrix& h, std::span<const std::uint16_t> y) {
  gal::PairDistances d;
  double between = 0, within = 0;
  std::size_t nb = 0, nw = 0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    for (std::size_t j = 0; j < h.rows(); ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t k = 0; k < h.cols(); ++k) s += (h(i, k) - h(j, k)) * (h(i, k) - h(j, k));
      if (y[i] == y[j]) {
        within += s;
        ++nw;
      } else {
        between += s;
        ++nb;
      }
    }
  }
  d.between = between / 2;
  d.within = within / 2;
  d.between_pairs = nb / 2;
  d.within_pairs = nw / 2;
  return d;
}

void criterion_oracle() {
  gal::Rng rng(77);
  double worst = 0;
  bool counts_ok = true;
  for (int t = 0; t < 200; ++t) {
    const std::size_t batch = 2 + rng.below(49);
    const std::size_t dim = 1 + rng.below(16);
    const std::size_t classes = 1 + rng.below(6);
    const Matrix h = gal::gaussian_matrix(rng, batch, dim, 0, 1);
    std::vector<std::uint16_t> y(batch);
    for (auto& v : y) v = static_cast<std::uint16_t>(rng.below(classes));
    const auto a = gal::gal_distances(h, y);
    const auto b = brute_force_distances(h, y);
    auto rel = [](double p, double q) {
      return p == q ? 0.0 : std::abs(p - q) / std::max(std::abs(p), std::abs(q));
    };
    worst = std::max({worst, rel(a.between, b.between), rel(a.within, b.within)});
    counts_ok &= a.between_pairs == b.between_pairs && a.within_pairs == b.within_pairs;
  }
  const Matrix worked{{0}, {2}, {10}, {12}};
  const std::vector<std::uint16_t> wy{0, 0, 1, 1};
  const auto w = gal::gal_distances(worked, wy);
  const bool worked_ok = w.within == 8.0 && w.between == 408.0;
  report(2, worst <= kOracleTol && counts_ok && worked_ok, "GAL distance oracle",
         "200 random batches, max rel diff " + fmt(worst * 1e15, 2) + "e-15 (tol 1e-12), worked " +
             "example d_B=" + fmt(w.within, 1) + " d_F=" + fmt(w.between, 1));
}

// ------------------------------------------------------------ desk-scale runs

gal::TrainConfig desk_config(std::uint64_t seed) {
  gal::TrainConfig cfg;
  cfg.layer_dims = {784, 256, 256, 256};
  cfg.alpha = {1.8, 1.05, 2.62};
  cfg.beta = {0.7, 0.6, 1.4};
  cfg.epochs_per_block = 10;
  cfg.eval_epochs = 10;
  cfg.lr = 1e-3;
  cfg.seed = seed;
  return cfg;
}

gal::ModelCheckpoint train_gal(const gal::Dataset& train, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  auto ckpt = gal::train_layerwise(train, desk_config(seed));
  gal::train_eval_readouts(ckpt, train, ckpt.config.eval_epochs);
  progress("GAL seed " + std::to_string(seed) + " trained in " + fmt(seconds_since(t0), 1) + " s");
  return ckpt;
}

std::string report_text(const gal::AttackReport& r) {
  std::ostringstream out;
  gal::write_jsonl(out, r);
  return out.str();
}

void criteria_desk(const Settings& s) {
  const auto full_train = gal::load_mnist_idx(s.data / "train-images-idx3-ubyte",
                                              s.data / "train-labels-idx1-ubyte");
  const auto full_test = gal::load_mnist_idx(s.data / "t10k-images-idx3-ubyte",
                                             s.data / "t10k-labels-idx1-ubyte");
  const auto train = gal::head(full_train, s.train_samples);
  const auto test = gal::head(full_test, s.test_samples);
  progress("train " + std::to_string(train.size()) + ", test " + std::to_string(test.size()));

  const auto t3 = std::chrono::steady_clock::now();
  const auto model = train_gal(train, 0);
  const double train_secs = seconds_since(t3);

  // 3: accuracy trend.
  double acc[4] = {};
  for (std::size_t l = 1; l <= 3; ++l) acc[l] = gal::evaluate(model, test, l);
  report(3,
         acc[3] >= kLayer3MinAccuracy && acc[3] >= acc[2] - kOrderSlack &&
             acc[2] >= acc[1] - kOrderSlack,
         "desk-scale accuracy trend",
         "test accuracy L1 " + fmt(acc[1]) + ", L2 " + fmt(acc[2]) + ", L3 " + fmt(acc[3]) +
             " (need L3 >= 0.90, non-decreasing within 0.02), training " + fmt(train_secs, 0) +
             " s");

  // Not a criterion: same run with 1/sqrt(N) frozen readouts, for comparison.
  {
    auto cfg = desk_config(0);
    cfg.readout_scale = gal::ReadoutScale::inv_sqrt;
    auto alt = gal::train_layerwise(train, cfg);
    gal::train_eval_readouts(alt, train, cfg.eval_epochs);
    std::printf("INFO criterion 3 with readout_scale=inv_sqrt: L1 %s, L2 %s, L3 %s\n",
                fmt(gal::evaluate(alt, test, 1)).c_str(), fmt(gal::evaluate(alt, test, 2)).c_str(),
                fmt(gal::evaluate(alt, test, 3)).c_str());
    std::fflush(stdout);
  }

  // 4: geometry convergence.
  {
    bool pass = true;
    std::string detail;
    for (std::size_t l = 1; l <= 3; ++l) {
      const double alpha = model.config.alpha[l - 1];
      const auto ratios = gal::layer_batch_ratios(model, train, l, 4242);
      std::size_t within = 0;
      double mean = 0;
      for (double r : ratios) {
        within += std::abs(r - alpha) <= kRatioBand * alpha;
        mean += r / static_cast<double>(ratios.size());
      }
      const double frac = ratios.empty() ? 0.0 : double(within) / double(ratios.size());
      pass &= frac >= kRatioFraction;
      detail += "L" + std::to_string(l) + " alpha " + fmt(alpha, 2) + " mean r " + fmt(mean, 3) +
                " in-band " + fmt(100 * frac, 1) + "%; ";
    }
    report(4, pass, "geometry convergence", detail + "need >= 80% of batches within 10%");
  }

  // 6: Hopfield identity and separation.
  {
    gal::Rng rng(606);
    const auto h3 = gal::build_hopfield(model, train, 3, kHopfieldSamples, 1);
    const auto h1 = gal::build_hopfield(model, train, 1, kHopfieldSamples, 1);
    double worst = 0;
    for (std::size_t t = 0; t < kIdentityVectors; ++t) {
      const Matrix v = gal::gaussian_matrix(rng, 1, h3.width, 0, 1);
      const double e = gal::energy(h3, v.row(0));
      double msq = 0;
      for (double m : gal::overlaps(h3, v.row(0))) msq += m * m;
      const double rhs = -static_cast<double>(h3.width) * msq;
      worst = std::max(worst, std::abs(e - rhs) / std::max(std::abs(e), 1e-300));
    }
    const std::vector<std::uint16_t> classes{0, 2};
    const double sep1 =
        gal::energy_separation(gal::energy_scatter(model, test, 1, classes, h1), 0, 2);
    const double sep3 =
        gal::energy_separation(gal::energy_scatter(model, test, 3, classes, h3), 0, 2);
    report(6, worst <= kIdentityTol && sep3 > sep1, "Hopfield identity and separation",
           "identity max rel err " + fmt(worst * 1e15, 2) + "e-15 over 1000 vectors; Fisher " +
               "separation digits {0,2}: L1 " + fmt(sep1) + ", L3 " + fmt(sep3));
  }

  // 7: spectrum fitter calibration and trend.
  {
    const auto pure = gal::fit_power_law_segments([] {
      std::vector<double> v;
      for (int n = 1; n <= 200; ++n) v.push_back(std::pow(double(n), -2.0));
      return v;
    }());
    std::vector<double> two;
    for (int n = 1; n <= 150; ++n)
      two.push_back(n <= 25 ? std::pow(double(n), -1.2)
                            : std::pow(25.0, -1.2) * std::pow(n / 25.0, -3.0));
    const auto split = gal::fit_power_law_segments(two);
    const bool synthetic_ok =
        std::abs(pure.head_gamma - 2.0) <= kSyntheticGammaTol &&
        std::abs(pure.tail_gamma - 2.0) <= kSyntheticGammaTol &&
        (split.breakpoint >= 25 - kBreakpointTol && split.breakpoint <= 25 + kBreakpointTol) &&
        std::abs(split.head_gamma - 1.2) <= kTwoRegimeGammaTol &&
        std::abs(split.tail_gamma - 3.0) <= kTwoRegimeGammaTol;
    double tail[4] = {};
    std::string detail;
    for (std::size_t l = 1; l <= 3; ++l) {
      const auto fit = gal::spectrum_fit(gal::layer_features(model, test, l).features);
      tail[l] = fit.tail_gamma;
      detail += "L" + std::to_string(l) + " head " + fmt(fit.head_gamma, 3) + " tail " +
                fmt(fit.tail_gamma, 3) + " b=" + std::to_string(fit.breakpoint) + "; ";
    }
    report(7, synthetic_ok && tail[1] > tail[3], "spectrum fitter calibration and trend",
           "synthetic gamma " + fmt(pure.head_gamma, 4) + ", two-regime b=" +
               std::to_string(split.breakpoint) + " gammas " + fmt(split.head_gamma, 3) + "/" +
               fmt(split.tail_gamma, 3) + "; trained " + detail);
  }

  // 5: robustness ordering over seeds; 8 reuses the seed-0 rerun.
  const std::vector<double> eps{0.1, 0.2};
  double l1[2] = {}, l3[2] = {}, base_acc = 0;
  std::string rerun_report, first_report;
  gal::ModelCheckpoint rerun;
  for (std::size_t seed = 0; seed < s.seeds; ++seed) {
    const auto m = seed == 0 ? (rerun = train_gal(train, 0)) : train_gal(train, seed);
    const auto rep = gal::robustness_sweep(m, test, gal::AttackKind::fgsm, eps, seed);
    if (seed == 0) {
      first_report = report_text(gal::robustness_sweep(model, test, gal::AttackKind::fgsm, eps, 0));
      rerun_report = report_text(rep);
    }
    for (const auto& c : rep.layers) {
      if (c.layer == 1) for (int e = 0; e < 2; ++e) l1[e] += c.accuracy[e] / double(s.seeds);
      if (c.layer == 3) for (int e = 0; e < 2; ++e) l3[e] += c.accuracy[e] / double(s.seeds);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto base = gal::train_end_to_end_baseline(train, desk_config(seed));
    progress("baseline seed " + std::to_string(seed) + " trained in " +
             fmt(seconds_since(t0), 1) + " s, clean " + fmt(gal::evaluate(base, test, 3)));
    const auto brep = gal::robustness_sweep(base, test, gal::AttackKind::fgsm, {0.2}, seed);
    base_acc += brep.layers.front().accuracy[0] / double(s.seeds);
  }
  report(5,
         l3[0] - l1[0] >= kRobustGap && l3[1] - l1[1] >= kRobustGap && l3[1] > base_acc,
         "robustness ordering",
         "FGSM mean over " + std::to_string(s.seeds) + " seeds: eps 0.1 L1 " + fmt(l1[0]) + " L3 " +
             fmt(l3[0]) + "; eps 0.2 L1 " + fmt(l1[1]) + " L3 " + fmt(l3[1]) + " baseline " +
             fmt(base_acc) + " (need L3-L1 >= 0.05 at both, L3 > baseline at 0.2)");

  // 8: determinism and persistence.
  {
    const auto bytes = gal::encode_checkpoint(model);
    const bool same_ckpt = bytes == gal::encode_checkpoint(rerun);
    const bool same_report = first_report == rerun_report;
    const auto path = fs::temp_directory_path() / "gal_acceptance.ckpt";
    gal::save_checkpoint(model, path);
    const auto reloaded = gal::load_checkpoint(path);
    const bool roundtrip = gal::encode_checkpoint(reloaded) == bytes && reloaded == model;
    fs::remove(path);
    report(8, same_ckpt && same_report && roundtrip, "determinism and persistence",
           std::string("rerun checkpoint ") + (same_ckpt ? "identical" : "DIFFERS") +
               " (" + std::to_string(bytes.size()) + " bytes), attack report " +
               (same_report ? "identical" : "DIFFERS") + ", save-load-save " +
               (roundtrip ? "identical" : "DIFFERS"));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  Settings s;
  app.add_option("--data", s.data, "directory with the MNIST IDX files")->required();
  app.add_option("--train-samples", s.train_samples);
  app.add_option("--test-samples", s.test_samples);
  app.add_option("--seeds", s.seeds, "seeds for the robustness average")->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  criterion_gradients();
  criterion_oracle();
  try {
    criteria_desk(s);
  } catch (const gal::Error& e) {
    std::printf("FAIL desk-scale criteria 3-8 not run: %s error: %s\n", gal::to_string(e.kind()),
                e.what());
    return failures + 6;
  }
  std::printf("%d criteria failed\n", failures);
  return failures;
}
