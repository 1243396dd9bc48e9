#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/mat.hpp"

namespace covpool {

// Eigendecomposition of a symmetric matrix: p = u * diag(lambda) * u^T with
// orthonormal columns in u and lambda sorted non-increasing.
struct SymEig {
  Mat u;
  std::vector<double> lambda;
};

namespace detail {

// Column sign convention: the largest-magnitude component of each eigenvector
// is positive; magnitude ties resolved by the lowest row index.
inline void fix_column_sign(Mat& u, std::size_t col) {
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t r = 0; r < u.rows; ++r) {
    const double m = std::fabs(u(r, col));
    if (m > best) {
      best = m;
      arg = r;
    }
  }
  if (u(arg, col) < 0.0)
    for (std::size_t r = 0; r < u.rows; ++r) u(r, col) = -u(r, col);
}

inline double offdiag_norm(const Mat& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = i + 1; j < a.cols; ++j) s += 2.0 * a(i, j) * a(i, j);
  return std::sqrt(s);
}

}  // namespace detail

// Cyclic Jacobi. Accepts any square matrix that is symmetric within
// 1e-8 * ||p||_F (symmetrized internally), stops once the off-diagonal norm
// falls below 1e-14 * ||p||_F, and gives up after 100 sweeps.
inline SymEig sym_eig(const Mat& p) {
  require_square(p, "sym_eig");
  const double pnorm = fro_norm(p);
  const double asym = asymmetry(p);
  if (!(asym <= 1e-8 * std::max(1.0, pnorm)))
    throw std::invalid_argument("sym_eig: input asymmetry " +
                                std::to_string(asym) + " exceeds tolerance");

  const std::size_t d = p.rows;
  Mat a = symmetrized(p);
  Mat v = Mat::identity(d);
  const double threshold = 1e-14 * pnorm;

  constexpr int kMaxSweeps = 100;
  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (detail::offdiag_norm(a) <= threshold) {
      converged = true;
      break;
    }
    for (std::size_t pi = 0; pi + 1 < d; ++pi) {
      for (std::size_t qi = pi + 1; qi < d; ++qi) {
        const double apq = a(pi, qi);
        if (apq == 0.0) continue;
        const double app = a(pi, pi);
        const double aqq = a(qi, qi);
        const double theta = (aqq - app) / (2.0 * apq);
        // tan of the rotation angle, smaller root for stability
        const double t =
            (theta >= 0.0 ? 1.0 : -1.0) /
            (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          if (k == pi || k == qi) continue;
          const double akp = a(k, pi);
          const double akq = a(k, qi);
          a(k, pi) = a(pi, k) = c * akp - s * akq;
          a(k, qi) = a(qi, k) = s * akp + c * akq;
        }
        a(pi, pi) = app - t * apq;
        a(qi, qi) = aqq + t * apq;
        a(pi, qi) = a(qi, pi) = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v(k, pi);
          const double vkq = v(k, qi);
          v(k, pi) = c * vkp - s * vkq;
          v(k, qi) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (!converged && detail::offdiag_norm(a) > threshold)
    throw std::runtime_error("sym_eig: no convergence after " +
                             std::to_string(kMaxSweeps) + " sweeps");

  std::vector<double> lam(d);
  for (std::size_t i = 0; i < d; ++i) lam[i] = a(i, i);
  for (std::size_t i = 0; i < d; ++i) detail::fix_column_sign(v, i);

  // Sort non-increasing; exact eigenvalue ties ordered by the sign-fixed
  // eigenvector columns lexicographically.
  std::vector<std::size_t> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    if (lam[x] != lam[y]) return lam[x] > lam[y];
    for (std::size_t r = 0; r < d; ++r) {
      if (v(r, x) != v(r, y)) return v(r, x) < v(r, y);
    }
    return false;
  });

  SymEig out;
  out.u = Mat(d, d);
  out.lambda.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    out.lambda[j] = lam[idx[j]];
    for (std::size_t r = 0; r < d; ++r) out.u(r, j) = v(r, idx[j]);
  }

  // Round tiny negative eigenvalues of nominally positive semidefinite input
  // up to zero; anything more negative is a genuine negative eigenvalue and
  // is kept.
  const double lmax = out.lambda.empty() ? 0.0 : std::max(out.lambda[0], 0.0);
  const double clamp = 1e-12 * lmax;
  for (double& l : out.lambda)
    if (l < 0.0 && l > -clamp) l = 0.0;
  return out;
}

// u * diag(vals) * u^T, explicitly symmetrized so reconstructions of the same
// (u, vals) pair are bitwise identical regardless of caller.
inline Mat reconstruct(const Mat& u, const std::vector<double>& vals) {
  if (u.cols != vals.size())
    throw std::invalid_argument("reconstruct: " + std::to_string(vals.size()) +
                                " values for " + std::to_string(u.cols) +
                                " columns");
  const std::size_t d = u.rows;
  Mat r(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < u.cols; ++k)
        s += vals[k] * u(i, k) * u(j, k);
      r(i, j) = s;
      r(j, i) = s;
    }
  }
  return r;
}

}  // namespace covpool
