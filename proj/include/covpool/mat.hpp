#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace covpool {

// Dense row-major matrix of doubles. Plain value type; operations validate
// shapes, the storage does not.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return a[r * cols + c];
  }

  bool square() const { return rows == cols && rows > 0; }
  bool same_shape(const Mat& o) const {
    return rows == o.rows && cols == o.cols;
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + "x" +
                                std::to_string(b.cols));
}

inline void require_square(const Mat& a, const char* op) {
  if (!a.square())
    throw std::invalid_argument(std::string(op) + ": matrix must be square, got " +
                                std::to_string(a.rows) + "x" +
                                std::to_string(a.cols));
}

inline Mat add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "add");
  Mat r = a;
  for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] += b.a[i];
  return r;
}

inline Mat sub(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "sub");
  Mat r = a;
  for (std::size_t i = 0; i < r.a.size(); ++i) r.a[i] -= b.a[i];
  return r;
}

inline Mat scaled(const Mat& a, double s) {
  Mat r = a;
  for (double& v : r.a) v *= s;
  return r;
}

inline Mat transpose(const Mat& a) {
  Mat r(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) r(j, i) = a(i, j);
  return r;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows)
    throw std::invalid_argument("matmul: inner dimensions differ, " +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows));
  Mat r(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) r(i, j) += aik * b(k, j);
    }
  }
  return r;
}

// Frobenius inner product <a, b> = sum_ij a_ij b_ij.
inline double fro_inner(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "fro_inner");
  double s = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) s += a.a[i] * b.a[i];
  return s;
}

inline double fro_norm(const Mat& a) {
  double s = 0.0;
  for (double v : a.a) s += v * v;
  return std::sqrt(s);
}

inline double max_abs(const Mat& a) {
  double m = 0.0;
  for (double v : a.a) m = std::max(m, std::fabs(v));
  return m;
}

inline bool all_finite(const Mat& a) {
  for (double v : a.a)
    if (!std::isfinite(v)) return false;
  return true;
}

// ||a - a^T||_F; 0 for exactly symmetric input.
inline double asymmetry(const Mat& a) {
  require_square(a, "asymmetry");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) {
      const double d = a(i, j) - a(j, i);
      s += 2.0 * d * d;
    }
  return std::sqrt(s);
}

inline Mat symmetrized(const Mat& a) {
  require_square(a, "symmetrized");
  Mat r = a;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) {
      const double m = 0.5 * (a(i, j) + a(j, i));
      r(i, j) = m;
      r(j, i) = m;
    }
  return r;
}

inline double trace(const Mat& a) {
  require_square(a, "trace");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i) t += a(i, i);
  return t;
}

}  // namespace covpool
