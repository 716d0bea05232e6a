#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gal/analysis.hpp"
#include "synthetic.hpp"

using gal::Matrix;

namespace {

std::vector<double> power_spectrum(std::size_t k, double gamma, double scale = 1.0) {
  std::vector<double> v;
  for (std::size_t n = 1; n <= k; ++n) v.push_back(scale * std::pow(double(n), -gamma));
  return v;
}

const gal::Dataset& toy() {
  static const gal::Dataset ds = gal::testing::clustered_dataset(160, 16, 4, 0.3, 31);
  return ds;
}

const gal::ModelCheckpoint& model() {
  static const gal::ModelCheckpoint ckpt = [] {
    gal::TrainConfig cfg;
    cfg.layer_dims = {16, 14, 14};
    cfg.classes = 4;
    cfg.alpha = {1.5, 2.0};
    cfg.beta = {0.7, 0.6};
    cfg.epochs_per_block = 3;
    cfg.batch_size = 20;
    cfg.lr = 1e-2;
    return gal::train_layerwise(toy(), cfg);
  }();
  return ckpt;
}

}  // namespace

TEST(Hopfield, SinglePatternHandExample) {
  // One class, one stored pattern e1 in N = 4.
  const Matrix p{{1, 0, 0, 0}};
  const std::vector<std::uint16_t> y{0};
  const auto m = gal::hopfield_from_patterns(p, y, 1);
  const Matrix j = m.coupling();
  EXPECT_DOUBLE_EQ(j(0, 0), 0.25);
  EXPECT_EQ(j(1, 1), 0.0);
  const std::vector<double> e1{1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(gal::energy(m, e1), -0.25);
  EXPECT_DOUBLE_EQ(gal::overlaps(m, e1)[0], 0.25);
}

TEST(Hopfield, CouplingIsSymmetricPsdAndMatchesQuadraticForm) {
  gal::Rng rng(2);
  const Matrix p = gal::gaussian_matrix(rng, 30, 9, 0, 1);
  std::vector<std::uint16_t> y;
  for (std::size_t i = 0; i < 30; ++i) y.push_back(static_cast<std::uint16_t>(i % 3));
  const auto m = gal::hopfield_from_patterns(p, y, 3);
  const Matrix j = m.coupling();
  EXPECT_EQ(j, gal::transpose(j));
  for (double v : gal::sym_eigenvalues(j)) EXPECT_GT(v, -1e-10);

  for (int t = 0; t < 100; ++t) {
    const Matrix h = gal::gaussian_matrix(rng, 1, 9, 0, 1);
    const double quad = -gal::matmul(gal::matmul(h, j), gal::transpose(h))(0, 0);
    const double e = gal::energy(m, h.row(0));
    EXPECT_NEAR(e, quad, 1e-12 * std::abs(quad));
    double msq = 0;
    for (double v : gal::overlaps(m, h.row(0))) msq += v * v;
    EXPECT_NEAR(e, -9.0 * msq, 1e-12 * std::abs(e));
  }
}

TEST(Hopfield, OverlapPeaksAtOwnPrototypeAndZeroVector) {
  gal::Rng rng(3);
  const Matrix protos = gal::gaussian_matrix(rng, 4, 32, 0, 1);
  Matrix p(40, 32);
  std::vector<std::uint16_t> y;
  for (std::size_t i = 0; i < 40; ++i) {
    y.push_back(static_cast<std::uint16_t>(i % 4));
    for (std::size_t k = 0; k < 32; ++k) p(i, k) = protos(i % 4, k) + 0.1 * rng.normal();
  }
  const auto m = gal::hopfield_from_patterns(p, y, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    const auto ov = gal::overlaps(m, protos.row(c));
    EXPECT_EQ(gal::argmax(ov), c);
  }
  const std::vector<double> zero(32, 0.0);
  EXPECT_EQ(gal::energy(m, zero), 0.0);
  EXPECT_THROW(gal::energy(m, std::vector<double>(31)), gal::Error);
}

TEST(Hopfield, BuildSamplesPerClassDeterministically) {
  const auto a = gal::build_hopfield(model(), toy(), 2, 10, 4);
  const auto b = gal::build_hopfield(model(), toy(), 2, 10, 4);
  EXPECT_EQ(a.class_sums, b.class_sums);
  EXPECT_EQ(a.sample_indices.size(), 40u);
  EXPECT_EQ(a.width, 14u);
  try {
    gal::build_hopfield(model(), toy(), 2, 41, 4);
    FAIL();
  } catch (const gal::Error& e) {
    EXPECT_EQ(e.kind(), gal::ErrorKind::data);
  }
}

TEST(EnergyScatter, NormalizationAndSelection) {
  const auto hm = gal::build_hopfield(model(), toy(), 1, 10, 1);
  const std::vector<std::uint16_t> classes{0, 2};
  const auto recs = gal::energy_scatter(model(), toy(), 1, classes, hm);
  EXPECT_EQ(recs.size(), 80u);
  double lo = 1, hi = 0;
  for (const auto& r : recs) {
    EXPECT_TRUE(r.label == 0 || r.label == 2);
    EXPECT_LE(r.energy, 0.0);
    lo = std::min(lo, r.energy_normalized);
    hi = std::max(hi, r.energy_normalized);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
  EXPECT_GT(gal::energy_separation(recs, 0, 2), 0.0);

  std::ostringstream out;
  gal::write_jsonl(out, recs);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 80);

  EXPECT_THROW(gal::energy_scatter(model(), toy(), 1, {}, hm), gal::Error);
  EXPECT_THROW(gal::energy_scatter(model(), toy(), 2, classes, hm), gal::Error);
}

TEST(EnergyScatter, MinMaxEdgeCases) {
  EXPECT_EQ(gal::min_max_normalize(std::vector<double>{3.0}), std::vector<double>{0.0});
  EXPECT_EQ(gal::min_max_normalize(std::vector<double>{2, 2, 2}), std::vector<double>(3, 0.0));
  EXPECT_EQ(gal::min_max_normalize(std::vector<double>{-1, 0, 3}),
            (std::vector<double>{0, 0.25, 1}));
}

TEST(Fisher, HandValues) {
  EXPECT_DOUBLE_EQ(gal::fisher_separation(std::vector<double>{0, 2}, std::vector<double>{4, 6}),
                   4.0 / std::sqrt(2.0));
  EXPECT_EQ(gal::fisher_separation(std::vector<double>{1}, std::vector<double>{1}), 0.0);
  EXPECT_THROW(gal::fisher_separation(std::vector<double>{}, std::vector<double>{1}), gal::Error);
}

TEST(SpectrumFitter, PurePowerLaw) {
  const auto fit = gal::fit_power_law_segments(power_spectrum(100, 2.0, 3.0));
  EXPECT_NEAR(fit.head_gamma, 2.0, 0.01);
  EXPECT_NEAR(fit.tail_gamma, 2.0, 0.01);
  EXPECT_NEAR(fit.head_intercept, std::log(3.0), 1e-9);
}

TEST(SpectrumFitter, RecoversTwoRegimes) {
  std::vector<double> v;
  const double knee = std::pow(20.0, -1.0);
  for (std::size_t n = 1; n <= 120; ++n)
    v.push_back(n <= 20 ? std::pow(double(n), -1.0) : knee * std::pow(n / 20.0, -3.0));
  const auto fit = gal::fit_power_law_segments(v);
  EXPECT_NEAR(double(fit.breakpoint), 20.0, 3.0);
  EXPECT_NEAR(fit.head_gamma, 1.0, 0.1);
  EXPECT_NEAR(fit.tail_gamma, 3.0, 0.1);
}

TEST(SpectrumFitter, ScaleInvariantSlopes) {
  std::vector<double> v;
  for (std::size_t n = 1; n <= 60; ++n) v.push_back(std::pow(double(n), n < 15 ? -0.7 : -1.9));
  const auto a = gal::fit_power_law_segments(v);
  for (double& x : v) x *= 1e-6;
  const auto b = gal::fit_power_law_segments(v);
  EXPECT_EQ(a.breakpoint, b.breakpoint);
  EXPECT_NEAR(a.head_gamma, b.head_gamma, 1e-9);
  EXPECT_NEAR(a.tail_gamma, b.tail_gamma, 1e-9);
}

TEST(SpectrumFitter, IsotropicFeaturesAreFlat) {
  gal::Rng rng(8);
  const auto fit = gal::spectrum_fit(gal::gaussian_matrix(rng, 4000, 40, 0, 1));
  EXPECT_LT(fit.head_gamma, 0.5);
  EXPECT_EQ(fit.eigenvalues.size(), 40u);
}

TEST(SpectrumFitter, TooFewEigenvalues) {
  try {
    gal::fit_power_law_segments(power_spectrum(11, 1.0));
    FAIL();
  } catch (const gal::Error& e) {
    EXPECT_EQ(e.kind(), gal::ErrorKind::analysis);
  }
  // Near-zero tail entries are dropped before counting.
  auto v = power_spectrum(12, 1.0);
  v.back() = 1e-14;
  EXPECT_THROW(gal::fit_power_law_segments(v), gal::Error);
  EXPECT_NO_THROW(gal::fit_power_law_segments(power_spectrum(12, 1.0)));
}

TEST(SpectrumFitter, CovarianceOfKnownData) {
  const Matrix x{{1, 0}, {-1, 0}, {0, 2}, {0, -2}};
  const Matrix c = gal::feature_covariance(x);
  EXPECT_EQ(c, (Matrix{{0.5, 0}, {0, 2}}));
}

TEST(FeatureExport, RoundTripAndCorruption) {
  const auto path = std::filesystem::temp_directory_path() / "gal_features_test.bin";
  gal::export_features(model(), toy(), 2, path);
  const auto back = gal::import_features(path);
  EXPECT_EQ(back, gal::layer_features(model(), toy(), 2));
  EXPECT_EQ(back.layer, 2u);

  auto bytes = gal::encode_features(back);
  bytes.push_back(0);
  EXPECT_THROW(gal::decode_features(bytes), gal::Error);
  bytes.resize(20);
  EXPECT_THROW(gal::decode_features(bytes), gal::Error);
  bytes[0] = 'Z';
  EXPECT_THROW(gal::decode_features(bytes), gal::Error);
}
