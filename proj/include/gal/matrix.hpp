#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <initializer_list>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "gal/error.hpp"

namespace gal {

// Dense row-major matrix of doubles. Vectors are 1×N or N×1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw Error(ErrorKind::dimension,
                  "matrix data length " + std::to_string(data_.size()) +
                      " does not match " + shape_string(rows_, cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) {
        throw Error(ErrorKind::dimension, "ragged matrix initializer");
      }
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  std::string shape() const { return shape_string(rows_, cols_); }

  static std::string shape_string(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

namespace detail {

inline void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw Error(ErrorKind::dimension, std::string(op) + ": incompatible shapes " +
                                          a.shape() + " and " + b.shape());
  }
}

// Worker count from GAL_THREADS; defaults to 1.
inline unsigned thread_count() {
  static const unsigned n = [] {
    const char* env = std::getenv("GAL_THREADS");
    if (env == nullptr) return 1u;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<unsigned>(v) : 1u;
  }();
  return n;
}

// Runs body(begin, end) over disjoint row ranges. Each output row is owned by
// exactly one worker, so results do not depend on the worker count.
template <typename Body>
void parallel_rows(std::size_t rows, std::size_t work_per_row, Body&& body) {
  const unsigned workers = thread_count();
  if (workers <= 1 || rows < 2 || rows * work_per_row < (1u << 16)) {
    body(std::size_t{0}, rows);
    return;
  }
  const std::size_t n = std::min<std::size_t>(workers, rows);
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t w = 0; w < n; ++w) {
    const std::size_t begin = rows * w / n;
    const std::size_t end = rows * (w + 1) / n;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// a·b. Every output cell accumulates over k in increasing order.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix out(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  detail::parallel_rows(a.rows(), inner * n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* o = out.flat().data() + i * n;
      for (std::size_t k = 0; k < inner; ++k) {
        const double aik = a(i, k);
        const double* brow = b.data().data() + k * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += aik * brow[j];
      }
    }
  });
  return out;
}

// aᵀ·b without forming the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  const std::size_t inner = a.rows();
  const std::size_t n = b.cols();
  detail::parallel_rows(a.cols(), inner * n, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double* brow = b.data().data() + k * n;
      for (std::size_t i = r0; i < r1; ++i) {
        const double aki = a(k, i);
        double* o = out.flat().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) o[j] += aki * brow[j];
      }
    }
  });
  return out;
}

// a·bᵀ without forming the transpose.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  const std::size_t inner = a.cols();
  detail::parallel_rows(a.rows(), inner * b.rows(), [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      const double* arow = a.data().data() + i * inner;
      for (std::size_t j = 0; j < b.rows(); ++j) {
        const double* brow = b.data().data() + j * inner;
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += arow[k] * brow[k];
        out(i, j) = acc;
      }
    }
  });
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix operator+(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  Matrix out = a;
  auto o = out.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bf[i];
  return out;
}

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "subtract", a, b);
  Matrix out = a;
  auto o = out.flat();
  auto bf = b.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bf[i];
  return out;
}

inline Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.flat()) v *= s;
  return out;
}

inline double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.flat()) acc += v * v;
  return std::sqrt(acc);
}

inline double trace(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorKind::dimension, "trace of non-square " + a.shape());
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) acc += a(i, i);
  return acc;
}

inline bool all_finite(const Matrix& a) {
  return std::all_of(a.flat().begin(), a.flat().end(),
                     [](double v) { return std::isfinite(v); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::dimension, "dot: lengths " + std::to_string(a.size()) +
                                          " and " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// Copies the listed rows of a into a new matrix.
inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) {
      throw Error(ErrorKind::index, "gather_rows: row " + std::to_string(rows[i]) +
                                        " out of range for " + a.shape());
    }
    std::copy(a.row(rows[i]).begin(), a.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace gal
