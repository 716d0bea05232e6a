#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gal/bytes.hpp"
#include "gal/matrix.hpp"

namespace gal {

struct AdamState {
  Matrix m;
  Matrix v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols, double learning_rate = 1e-3)
      : m(rows, cols), v(rows, cols), lr(learning_rate) {}

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline AdamState adam_for(const Matrix& param, double lr) {
  return AdamState(param.rows(), param.cols(), lr);
}

// One bias-corrected Adam update in place.
inline void adam_step(AdamState& state, Matrix& param, const Matrix& grad) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      state.m.rows() != param.rows() || state.m.cols() != param.cols()) {
    throw Error(ErrorKind::dimension, "adam_step: param " + param.shape() + ", grad " +
                                          grad.shape() + ", state " + state.m.shape());
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  auto p = param.flat();
  auto g = grad.flat();
  auto m = state.m.flat();
  auto v = state.v.flat();
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

inline std::vector<std::uint8_t> serialize(const AdamState& s) {
  std::vector<std::uint8_t> out;
  detail::put_le<std::uint64_t>(out, s.t);
  detail::put_le<double>(out, s.lr);
  detail::put_le<double>(out, s.beta1);
  detail::put_le<double>(out, s.beta2);
  detail::put_le<double>(out, s.eps);
  detail::put_matrix(out, s.m);
  detail::put_matrix(out, s.v);
  return out;
}

inline AdamState deserialize_adam(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  AdamState s;
  s.t = in.get<std::uint64_t>();
  s.lr = in.get<double>();
  s.beta1 = in.get<double>();
  s.beta2 = in.get<double>();
  s.eps = in.get<double>();
  s.m = detail::get_matrix(in);
  s.v = detail::get_matrix(in);
  return s;
}

}  // namespace gal
