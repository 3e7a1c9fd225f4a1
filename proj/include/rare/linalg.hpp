#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace rare {

/// Small dense double matrix for the closed-form geometry (row-major).
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

  double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline Mat matmul(const Mat& x, const Mat& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Mat z(x.rows, y.cols);
  for (int i = 0; i < x.rows; ++i)
    for (int k = 0; k < x.cols; ++k) {
      double v = x(i, k);
      for (int j = 0; j < y.cols; ++j) z(i, j) += v * y(k, j);
    }
  return z;
}

inline double inf_norm(const Mat& m) {
  double best = 0.0;
  for (int i = 0; i < m.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += std::fabs(m(i, j));
    best = std::max(best, s);
  }
  return best;
}

/// Inverts a square matrix by Gauss-Jordan with partial pivoting.
/// Throws on (numerical) singularity.
inline Mat invert(const Mat& m) {
  if (m.rows != m.cols) throw std::invalid_argument("invert: matrix not square");
  int n = m.rows;
  Mat a = m;
  Mat inv = Mat::identity(n);
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a(r, col)) > std::fabs(a(pivot, col))) pivot = r;
    if (std::fabs(a(pivot, col)) < 1e-300)
      throw std::runtime_error("invert: singular matrix at column " + std::to_string(col));
    if (pivot != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(a(col, j), a(pivot, j));
        std::swap(inv(col, j), inv(pivot, j));
      }
    }
    double d = a(col, col);
    for (int j = 0; j < n; ++j) {
      a(col, j) /= d;
      inv(col, j) /= d;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = a(r, col);
      if (f == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        a(r, j) -= f * a(col, j);
        inv(r, j) -= f * inv(col, j);
      }
    }
  }
  return inv;
}

/// Solves A x = b for a small square system (used for homography fitting).
inline std::vector<double> solve(const Mat& m, const std::vector<double>& b) {
  if (m.rows != m.cols || static_cast<int>(b.size()) != m.rows)
    throw std::invalid_argument("solve: dimension mismatch");
  Mat inv = invert(m);
  std::vector<double> x(b.size(), 0.0);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) x[static_cast<size_t>(i)] += inv(i, j) * b[static_cast<size_t>(j)];
  return x;
}

}  // namespace rare
