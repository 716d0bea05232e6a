#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gal/matrix.hpp"

namespace gal {

struct SymEigen {
  std::vector<double> values;  // descending
  Matrix vectors;              // column k pairs with values[k]; empty if not requested
};

namespace detail {

inline double off_diagonal_norm(const Matrix& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) acc += a(i, j) * a(i, j);
  return std::sqrt(acc);
}

}  // namespace detail

// Cyclic Jacobi on the symmetrized input (A+Aᵀ)/2. Sweeps stop once the
// off-diagonal Frobenius norm falls below 1e-12·‖A‖_F, or after 100 sweeps.
inline SymEigen sym_eigen(const Matrix& input, bool want_vectors = true) {
  if (input.rows() != input.cols()) {
    throw Error(ErrorKind::dimension, "sym_eigen: non-square input " + input.shape());
  }
  const std::size_t n = input.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (input(i, j) + input(j, i));

  Matrix v = want_vectors ? Matrix::identity(n) : Matrix();
  const double tol = 1e-12 * frobenius_norm(a);
  constexpr int kMaxSweeps = 100;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (detail::off_diagonal_norm(a) <= tol) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A ← Gᵀ A G with G the (p,q) rotation.
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        if (want_vectors) {
          for (std::size_t k = 0; k < n; ++k) {
            const double vkp = v(k, p);
            const double vkq = v(k, q);
            v(k, p) = c * vkp - s * vkq;
            v(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  SymEigen out;
  out.values.reserve(n);
  for (std::size_t k : order) out.values.push_back(a(k, k));
  if (want_vectors) {
    out.vectors = Matrix(n, n);
    for (std::size_t col = 0; col < n; ++col)
      for (std::size_t r = 0; r < n; ++r) out.vectors(r, col) = v(r, order[col]);
  }
  return out;
}

inline std::vector<double> sym_eigenvalues(const Matrix& a) {
  return sym_eigen(a, false).values;
}

}  // namespace gal
