#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/mat.hpp"
#include "covpool/sym_eig.hpp"

namespace covpool {

// Scalar function applied to a spectrum. Domain handling lives in
// clamped_spectrum(); eval/deriv assume an admissible input.
struct SpectralFn {
  enum class Kind { Sqrt, Proot, Log, ExpInv };
  Kind kind = Kind::Sqrt;
  int p = 0;  // root order, Proot only

  static SpectralFn sqrt() { return {Kind::Sqrt, 0}; }
  static SpectralFn proot(int order) {
    if (order < 2)
      throw std::invalid_argument("SpectralFn::proot: order must be >= 2, got " +
                                  std::to_string(order));
    return {Kind::Proot, order};
  }
  static SpectralFn log() { return {Kind::Log, 0}; }
  static SpectralFn exp_inv() { return {Kind::ExpInv, 0}; }

  double eval(double x) const {
    switch (kind) {
      case Kind::Sqrt:
        return std::sqrt(x);
      case Kind::Proot:
        return std::pow(x, 1.0 / p);
      case Kind::Log:
        return std::log(x);
      case Kind::ExpInv:
        return std::exp(-x);
    }
    return 0.0;
  }

  double deriv(double x) const {
    switch (kind) {
      case Kind::Sqrt:
        return 0.5 / std::sqrt(x);
      case Kind::Proot:
        return (1.0 / p) * std::pow(x, 1.0 / p - 1.0);
      case Kind::Log:
        return 1.0 / x;
      case Kind::ExpInv:
        return -std::exp(-x);
    }
    return 0.0;
  }

  const char* name() const {
    switch (kind) {
      case Kind::Sqrt:
        return "sqrt";
      case Kind::Proot:
        return "proot";
      case Kind::Log:
        return "log";
      case Kind::ExpInv:
        return "exp_inv";
    }
    return "?";
  }
};

// Minimum admissible eigenvalue for log; below this is a domain error.
inline constexpr double kLogFloor = 1e-12;

// Returns the spectrum with the function's domain rules applied.
// sqrt/proot: values in (-1e-10 * lambda_max, 0) are rounding debris of a
// semidefinite matrix and snap to 0; more negative values are rejected.
// log: values below kLogFloor are rejected. exp_inv: unrestricted.
inline std::vector<double> clamped_spectrum(const SpectralFn& fn,
                                            const std::vector<double>& lambda) {
  std::vector<double> out = lambda;
  if (fn.kind == SpectralFn::Kind::Sqrt || fn.kind == SpectralFn::Kind::Proot) {
    double lmax = 0.0;
    for (double l : lambda) lmax = std::max(lmax, l);
    const double band = 1e-10 * lmax;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] < 0.0) {
        if (out[i] > -band) {
          out[i] = 0.0;
        } else {
          throw std::domain_error(std::string("mat_fn(") + fn.name() +
                                  "): negative eigenvalue " +
                                  std::to_string(out[i]) + " at index " +
                                  std::to_string(i));
        }
      }
    }
  } else if (fn.kind == SpectralFn::Kind::Log) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] < kLogFloor)
        throw std::domain_error("mat_fn(log): eigenvalue " +
                                std::to_string(out[i]) + " at index " +
                                std::to_string(i) + " below floor 1e-12");
    }
  }
  return out;
}

// u * diag(fn(lambda)) * u^T.
inline Mat mat_fn(const SymEig& eig, const SpectralFn& fn) {
  std::vector<double> lam = clamped_spectrum(fn, eig.lambda);
  for (double& l : lam) l = fn.eval(l);
  return reconstruct(eig.u, lam);
}

// Gradients with respect to an eigendecomposition's factors.
struct EigGrad {
  Mat d_u;                      // dl/dU
  std::vector<double> d_lambda; // dl/dlambda
};

// Backward of S = U f(Lambda) U^T for a loss gradient G = dl/dS.
//
//   dS = dU f(Lambda) U^T + U (f'(Lambda) o dLambda) U^T + U f(Lambda) dU^T
//
// pairing with G term by term gives
//
//   dl/dU        = (G + G^T) U f(Lambda)          -- carries f
//   dl/dlambda_i = f'(lambda_i) (U^T G U)_ii      -- carries f'
//
// The U line uses f itself, not f'; for f(x) = e^-x the two coincide up to
// sign, which is why only the lambda line shows a leading minus there.
// Verified against central finite differences.
inline EigGrad mat_fn_backward(const SymEig& eig, const SpectralFn& fn,
                               const Mat& d_out) {
  require_square(d_out, "mat_fn_backward");
  if (d_out.rows != eig.u.rows)
    throw std::invalid_argument("mat_fn_backward: gradient is " +
                                std::to_string(d_out.rows) + "x" +
                                std::to_string(d_out.cols) + " for dimension " +
                                std::to_string(eig.u.rows));
  const std::size_t d = eig.u.rows;
  const std::vector<double> lam = clamped_spectrum(fn, eig.lambda);

  EigGrad g;
  g.d_u = Mat(d, d);
  g.d_lambda.assign(d, 0.0);

  Mat gs(d, d);  // G + G^T
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) gs(i, j) = d_out(i, j) + d_out(j, i);
  const Mat w = matmul(gs, eig.u);
  for (std::size_t j = 0; j < d; ++j) {
    const double fj = fn.eval(lam[j]);
    for (std::size_t i = 0; i < d; ++i) g.d_u(i, j) = w(i, j) * fj;
  }
  for (std::size_t i = 0; i < d; ++i) {
    // (U^T G U)_ii = u_i^T G u_i
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double gr = 0.0;
      for (std::size_t c = 0; c < d; ++c) gr += d_out(r, c) * eig.u(c, i);
      s += eig.u(r, i) * gr;
    }
    g.d_lambda[i] = fn.deriv(lam[i]) * s;
  }
  return g;
}

// Reciprocal-gap matrix: k_ij = 1 / (lambda_i - lambda_j) off the diagonal,
// with |lambda_i - lambda_j| floored at epsilon (sign preserved), zero
// diagonal. Antisymmetric by construction, including exact ties.
struct KMatrix {
  Mat k;
  double epsilon = 0.0;
};

inline KMatrix build_k_matrix(const std::vector<double>& lambda,
                              double epsilon) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("build_k_matrix: epsilon must be positive");
  for (std::size_t i = 0; i + 1 < lambda.size(); ++i)
    if (lambda[i] < lambda[i + 1])
      throw std::invalid_argument(
          "build_k_matrix: spectrum not sorted non-increasing");
  const std::size_t d = lambda.size();
  KMatrix km;
  km.epsilon = epsilon;
  km.k = Mat(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) {
      const double v = 1.0 / std::max(lambda[i] - lambda[j], epsilon);
      km.k(i, j) = v;
      km.k(j, i) = -v;
    }
  }
  return km;
}

// Backward of the eigendecomposition itself: maps (dl/dU, dl/dlambda) to
// dl/dP for symmetric P = U diag(lambda) U^T.
//
// First-order perturbation of a simple eigenpair:
//   dlambda_i = u_i^T dP u_i
//   du_i      = sum_{j != i} u_j (u_j^T dP u_i) / (lambda_i - lambda_j)
// so with D = dl/dU,
//   dl = sum_i dlam_i (U^T dP U)_ii
//      + sum_{j != i} (U^T D)_ji (U^T dP U)_ji / (lambda_i - lambda_j)
// The (j,i) entry of the inner matrix carries 1/(lambda_i - lambda_j), which
// is K^T (not K) under k_ij = 1/(lambda_i - lambda_j):
//   dl/dP = sym( U ( K^T o (U^T D) + diag(dlam) ) U^T ),  sym(Z) = (Z+Z^T)/2.
// The symmetrization restricts the gradient to symmetric perturbations.
// Convention fixed by agreement with central finite differences.
inline Mat eig_backward(const SymEig& eig, const EigGrad& grad,
                        double epsilon = 1e-12) {
  const std::size_t d = eig.u.rows;
  if (grad.d_u.rows != d || grad.d_u.cols != d || grad.d_lambda.size() != d)
    throw std::invalid_argument("eig_backward: gradient shapes do not match");
  const KMatrix km = build_k_matrix(eig.lambda, epsilon);
  const Mat ut_du = matmul(transpose(eig.u), grad.d_u);
  Mat inner(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      inner(i, j) = km.k(j, i) * ut_du(i, j);
    inner(i, i) = grad.d_lambda[i];
  }
  const Mat full = matmul(matmul(eig.u, inner), transpose(eig.u));
  return symmetrized(full);
}

// Coupled Newton iteration for the principal square root:
//   Y_0 = P / tr(P), Z_0 = I
//   W   = 3I - Z_k Y_k
//   Y_{k+1} = Y_k W / 2,  Z_{k+1} = W Z_k / 2
// returning sqrt(tr(P)) * Y_iters. Forward only; used as an independent
// cross-check of the spectral square root.
inline Mat newton_schulz_sqrt(const Mat& p, int iters) {
  require_square(p, "newton_schulz_sqrt");
  if (iters < 1)
    throw std::invalid_argument("newton_schulz_sqrt: iters must be >= 1");
  const std::size_t d = p.rows;
  bool all_zero = true;
  for (double v : p.a)
    if (v != 0.0) all_zero = false;
  if (all_zero) return Mat(d, d);
  const double tr = trace(p);
  if (!(tr > 0.0))
    throw std::runtime_error("newton_schulz_sqrt: nonpositive trace " +
                             std::to_string(tr));
  Mat y = scaled(p, 1.0 / tr);
  Mat z = Mat::identity(d);
  for (int it = 0; it < iters; ++it) {
    Mat w = scaled(matmul(z, y), -1.0);
    for (std::size_t i = 0; i < d; ++i) w(i, i) += 3.0;
    y = scaled(matmul(y, w), 0.5);
    z = scaled(matmul(w, z), 0.5);
  }
  return scaled(y, std::sqrt(tr));
}

// Best rank-k approximation: keep the k leading eigenvalues, zero the rest.
inline Mat truncate_eig(const SymEig& eig, std::size_t k) {
  const std::size_t d = eig.lambda.size();
  if (k < 1 || k > d)
    throw std::invalid_argument("truncate_eig: k = " + std::to_string(k) +
                                " out of range [1, " + std::to_string(d) + "]");
  std::vector<double> vals = eig.lambda;
  for (std::size_t i = k; i < d; ++i) vals[i] = 0.0;
  return reconstruct(eig.u, vals);
}

}  // namespace covpool
