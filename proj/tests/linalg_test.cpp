#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gal/eigen.hpp"
#include "gal/matrix.hpp"
#include "gal/rng.hpp"

using gal::Matrix;

namespace {

Matrix random_matrix(gal::Rng& rng, std::size_t r, std::size_t c) {
  return gal::gaussian_matrix(rng, r, c, 0.0, 1.0);
}

// Cofactor expansion along the first row.
double det_cofactor(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n == 1) return a(0, 0);
  double acc = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    Matrix minor(n - 1, n - 1);
    for (std::size_t r = 1; r < n; ++r)
      for (std::size_t c = 0, cc = 0; c < n; ++c)
        if (c != j) minor(r - 1, cc++) = a(r, c);
    acc += (j % 2 ? -1.0 : 1.0) * a(0, j) * det_cofactor(minor);
  }
  return acc;
}

Matrix random_symmetric(gal::Rng& rng, std::size_t n) {
  Matrix a = random_matrix(rng, n, n);
  return 0.5 * (a + gal::transpose(a));
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  gal::Rng rng(1);
  const Matrix a = random_matrix(rng, 3, 4);
  EXPECT_EQ(gal::matmul(Matrix::identity(3), a), a);
}

TEST(Matmul, HandComputedProduct) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{1}, {1}};
  EXPECT_EQ(gal::matmul(a, b), (Matrix{{3}, {7}}));
}

TEST(Matmul, ZeroAnnihilates) {
  gal::Rng rng(2);
  const Matrix a = random_matrix(rng, 4, 5);
  EXPECT_EQ(gal::matmul(a, Matrix(5, 2)), Matrix(4, 2));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    gal::matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected dimension error";
  } catch (const gal::Error& e) {
    EXPECT_EQ(e.kind(), gal::ErrorKind::dimension);
    EXPECT_NE(std::string(e.what()).find("2x3 and 2x3"), std::string::npos);
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  gal::Rng rng(3);
  const Matrix a = random_matrix(rng, 6, 4);
  const Matrix b = random_matrix(rng, 6, 5);
  const Matrix c = random_matrix(rng, 7, 4);
  const Matrix tn = gal::matmul_tn(a, b);
  const Matrix ref_tn = gal::matmul(gal::transpose(a), b);
  const Matrix nt = gal::matmul_nt(a, c);
  const Matrix ref_nt = gal::matmul(a, gal::transpose(c));
  EXPECT_LT(gal::frobenius_norm(tn - ref_tn), 1e-12);
  EXPECT_LT(gal::frobenius_norm(nt - ref_nt), 1e-12);
}

TEST(Matmul, AssociativityOnRandomTriples) {
  gal::Rng rng(4);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t m = 1 + rng.below(8), k = 1 + rng.below(8), p = 1 + rng.below(8),
                      n = 1 + rng.below(8);
    const Matrix a = random_matrix(rng, m, k);
    const Matrix b = random_matrix(rng, k, p);
    const Matrix c = random_matrix(rng, p, n);
    const Matrix left = gal::matmul(gal::matmul(a, b), c);
    const Matrix right = gal::matmul(a, gal::matmul(b, c));
    EXPECT_LE(gal::frobenius_norm(left - right), 1e-9 * gal::frobenius_norm(left));
  }
}

TEST(Rng, Xoshiro256StarStarReferenceStream) {
  // Reference outputs for state {1, 2, 3, 4}.
  auto rng = gal::Rng::from_state({1, 2, 3, 4});
  const std::uint64_t expected[] = {11520ULL, 0ULL, 1509978240ULL, 1215971899390074240ULL,
                                    1216172134540287360ULL, 607988272756665600ULL};
  for (auto e : expected) EXPECT_EQ(rng.next(), e);
}

TEST(Rng, SplitMixSeeding) {
  std::uint64_t x = 0;
  EXPECT_EQ(gal::splitmix64(x), 0xe220a8397b1dcdafULL);
  gal::Rng rng(0);
  EXPECT_EQ(rng.state()[0], 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.state()[3], 0xf88bb8a8724c81ecULL);
  EXPECT_EQ(rng.next(), 11091344671253066420ULL);
  EXPECT_EQ(rng.next(), 13793997310169335082ULL);
}

TEST(Rng, SameSeedSameStream) {
  gal::Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next();
    EXPECT_EQ(va, b.next());
    differs |= va != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(GaussianMatrix, ZeroStdGivesMean) {
  gal::Rng rng(5);
  const Matrix m = gal::gaussian_matrix(rng, 3, 3, 0.75, 0.0);
  for (double v : m.flat()) EXPECT_EQ(v, 0.75);
}

TEST(GaussianMatrix, DeterministicPerSeed) {
  gal::Rng a(9), b(9);
  EXPECT_EQ(gal::gaussian_matrix(a, 4, 7, 0, 1), gal::gaussian_matrix(b, 4, 7, 0, 1));
}

TEST(GaussianMatrix, SampleMomentsMatch) {
  gal::Rng rng(6);
  const Matrix m = gal::gaussian_matrix(rng, 1000, 100, 0.0, 1.0);
  const double n = static_cast<double>(m.size());
  const double mean = std::accumulate(m.flat().begin(), m.flat().end(), 0.0) / n;
  double var = 0.0;
  for (double v : m.flat()) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(std::sqrt(var / n), 1.0, 0.02);
}

TEST(SymEigen, DiagonalSortedDescending) {
  const Matrix a{{3, 0, 0}, {0, 1, 0}, {0, 0, 2}};
  EXPECT_EQ(gal::sym_eigenvalues(a), (std::vector<double>{3, 2, 1}));
}

TEST(SymEigen, TwoByTwoByCharacteristicPolynomial) {
  const auto ev = gal::sym_eigenvalues(Matrix{{2, 1}, {1, 2}});
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_NEAR(ev[0], 3.0, 1e-14);
  EXPECT_NEAR(ev[1], 1.0, 1e-14);
}

TEST(SymEigen, NonSquareRejected) {
  EXPECT_THROW(gal::sym_eigenvalues(Matrix(2, 3)), gal::Error);
}

TEST(SymEigen, TraceDeterminantAndReconstruction) {
  gal::Rng rng(7);
  for (std::size_t n = 1; n <= 7; ++n) {
    const Matrix a = random_symmetric(rng, n);
    const auto eig = gal::sym_eigen(a);
    const double sum = std::accumulate(eig.values.begin(), eig.values.end(), 0.0);
    const double prod =
        std::accumulate(eig.values.begin(), eig.values.end(), 1.0, std::multiplies<>());
    EXPECT_NEAR(sum, gal::trace(a), 1e-9);
    const double det = det_cofactor(a);
    EXPECT_NEAR(prod, det, 1e-9 * std::max(1.0, std::abs(det)));
    EXPECT_TRUE(std::is_sorted(eig.values.rbegin(), eig.values.rend()));

    Matrix lambda(n, n);
    for (std::size_t i = 0; i < n; ++i) lambda(i, i) = eig.values[i];
    const Matrix recon = gal::matmul_nt(gal::matmul(eig.vectors, lambda), eig.vectors);
    EXPECT_LT(gal::frobenius_norm(a - recon), 1e-8 * gal::frobenius_norm(a));
  }
}

TEST(SymEigen, LargerCovarianceTrace) {
  gal::Rng rng(8);
  const Matrix x = random_matrix(rng, 60, 40);
  Matrix cov = gal::matmul_tn(x, x);
  const auto ev = gal::sym_eigenvalues(cov);
  EXPECT_NEAR(std::accumulate(ev.begin(), ev.end(), 0.0), gal::trace(cov),
              1e-9 * gal::trace(cov));
  EXPECT_GT(ev.back(), 0.0);
}
