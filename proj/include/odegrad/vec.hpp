#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "odegrad/errors.hpp"

namespace odegrad {

using Vec = std::vector<double>;

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> v, double alpha) {
  for (double& x : v) x *= alpha;
}

inline double norm1(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += std::fabs(x);
  return s;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double norm_inf(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::fabs(x));
  return s;
}

// Dense row-major matrix, sized for small state dimensions.
struct Matrix {
  int rows = 0;
  int cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

  std::span<const double> row(int i) const {
    return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
  }
};

inline Matrix operator-(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw Error(ErrorKind::DimensionMismatch, "matrix subtraction shape mismatch");
  Matrix r(a.rows, a.cols);
  for (std::size_t i = 0; i < a.data.size(); ++i) r.data[i] = a.data[i] - b.data[i];
  return r;
}

// row-vector times matrix: out_j = sum_i v_i A_ij
inline Vec vec_mat(std::span<const double> v, const Matrix& a) {
  Vec out(static_cast<std::size_t>(a.cols), 0.0);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) out[j] += v[i] * a(i, j);
  return out;
}

inline Vec mat_vec(const Matrix& a, std::span<const double> v) {
  Vec out(static_cast<std::size_t>(a.rows), 0.0);
  for (int i = 0; i < a.rows; ++i) out[i] = dot(a.row(i), v);
  return out;
}

}  // namespace odegrad
