#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/mat.hpp"
#include "covpool/spectral.hpp"
#include "covpool/sym_eig.hpp"

namespace covpool {

// Covariance pooling head configuration. `ridge` adds ridge * I to the
// covariance before eigendecomposition. The default keeps the pipeline
// exact; training harnesses set a tiny positive value because a rectified
// feature row that dies for a sample makes an exact zero eigenvalue, and
// d(sqrt)/d(lambda) is unbounded there. The backward is unaffected:
// d(P + ridge I)/dP is the identity.
struct GcpConfig {
  bool use_seb = false;                            // scale by (||QS^T||_F + 1)
  SpectralFn normalization = SpectralFn::sqrt();   // sqrt | proot(p) | log
  std::optional<std::size_t> truncate_k;           // keep k leading eigenvalues
  double k_epsilon = 1e-12;                        // eigengap floor, backward
  double ridge = 0.0;                              // diagonal loading on P
};

inline void validate_config(const GcpConfig& cfg) {
  if (cfg.normalization.kind == SpectralFn::Kind::ExpInv)
    throw std::invalid_argument("GcpConfig: exp_inv is not a normalization");
  if (!(cfg.k_epsilon > 0.0))
    throw std::invalid_argument("GcpConfig: k_epsilon must be positive");
  if (cfg.ridge < 0.0)
    throw std::invalid_argument("GcpConfig: ridge must be non-negative");
}

// Sample covariance P = X Ibar X^T with Ibar = (1/N)(I - (1/N) 1 1^T),
// computed as (1/N) Xc Xc^T over row-centered Xc. Exactly symmetric.
inline Mat covariance(const Mat& x) {
  if (x.rows == 0 || x.cols == 0)
    throw std::invalid_argument("covariance: empty input");
  const std::size_t d = x.rows, n = x.cols;
  Mat xc = x;
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += x(i, j);
    m /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) xc(i, j) -= m;
  }
  Mat p(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += xc(i, k) * xc(j, k);
      s /= static_cast<double>(n);
      p(i, j) = s;
      p(j, i) = s;
    }
  }
  return p;
}

// The matrix the eigendecomposition actually sees: sample covariance plus
// optional diagonal loading. Inference paths that rebuild the pooled matrix
// themselves must use this, not covariance(), to match gcp_forward.
inline Mat pooled_input(const Mat& x, const GcpConfig& cfg) {
  Mat p = covariance(x);
  if (cfg.ridge > 0.0)
    for (std::size_t i = 0; i < p.rows; ++i) p(i, i) += cfg.ridge;
  return p;
}

// dl/dX = (G + G^T) X Ibar for G = dl/dP; right-multiplying by Ibar is
// row-centering followed by the 1/N scale.
inline Mat covariance_backward(const Mat& x, const Mat& d_p) {
  if (d_p.rows != x.rows || d_p.cols != x.rows)
    throw std::invalid_argument("covariance_backward: gradient is " +
                                std::to_string(d_p.rows) + "x" +
                                std::to_string(d_p.cols) + " for d = " +
                                std::to_string(x.rows));
  const std::size_t d = x.rows, n = x.cols;
  Mat gs(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) gs(i, j) = d_p(i, j) + d_p(j, i);
  Mat y = matmul(gs, x);
  for (std::size_t i = 0; i < d; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += y(i, j);
    m /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j)
      y(i, j) = (y(i, j) - m) / static_cast<double>(n);
  }
  return y;
}

// ||Q S^T||_F for Q = P^{1/2}, S = e^{-P} in closed spectral form:
// sqrt(sum_i lambda_i e^{-2 lambda_i}). Lies in (0, ||Q||_F) whenever some
// lambda_i > 0 and equals 0 only for the zero spectrum.
inline double seb_factor(const std::vector<double>& lambda) {
  double lmax = 0.0;
  for (double l : lambda) lmax = std::max(lmax, l);
  const double band = 1e-12 * lmax;
  double s = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i) {
    double l = lambda[i];
    if (l < 0.0) {
      if (l > -band)
        l = 0.0;
      else
        throw std::domain_error("seb_factor: negative eigenvalue " +
                                std::to_string(l) + " at index " +
                                std::to_string(i));
    }
    s += l * std::exp(-2.0 * l);
  }
  return std::sqrt(s);
}

inline double seb_factor(const SymEig& eig) { return seb_factor(eig.lambda); }

// Gradients of factor = ||Q S^T||_F with respect to its two inputs, as
// matrix products (no eigen path):
//   dfactor/dQ = Q S^T S / factor,  dfactor/dS = S Q^T Q / factor.
inline std::pair<Mat, Mat> seb_factor_backward(const Mat& q, const Mat& s,
                                               double factor) {
  require_square(q, "seb_factor_backward");
  require_same_shape(q, s, "seb_factor_backward");
  if (!(factor > 0.0))
    throw std::runtime_error("seb_factor_backward: factor must be positive, got " +
                             std::to_string(factor));
  Mat d_q = scaled(matmul(matmul(q, transpose(s)), s), 1.0 / factor);
  Mat d_s = scaled(matmul(matmul(s, transpose(q)), q), 1.0 / factor);
  return {d_q, d_s};
}

// Cached forward pass of the pooling head; holds everything the backward
// replays, bit for bit.
struct GcpState {
  GcpConfig cfg;
  Mat x;                            // d x N input features
  Mat p;                            // covariance of x
  SymEig eig;                       // eigenpairs of p
  std::vector<double> lambda_used;  // spectrum entering normalization
                                    // (truncated + domain-clamped)
  std::optional<Mat> p_used;        // truncate_eig output when truncating
  Mat q;                            // normalized covariance
  std::optional<Mat> s;             // e^{-P}, SEB only
  std::optional<double> factor;     // ||Q S^T||_F, SEB only
  Mat a;                            // head output
};

// covariance -> sym_eig -> optional truncation -> normalization -> SEB scale.
inline GcpState gcp_forward(const Mat& x, const GcpConfig& cfg) {
  validate_config(cfg);
  GcpState st;
  st.cfg = cfg;
  st.x = x;
  st.p = pooled_input(x, cfg);
  st.eig = sym_eig(st.p);
  const std::size_t d = st.eig.lambda.size();

  st.lambda_used = st.eig.lambda;
  if (cfg.truncate_k) {
    const std::size_t k = *cfg.truncate_k;
    st.p_used = truncate_eig(st.eig, k);  // validates k
    for (std::size_t i = k; i < d; ++i) st.lambda_used[i] = 0.0;
  }
  st.lambda_used = clamped_spectrum(cfg.normalization, st.lambda_used);

  std::vector<double> fvals(d);
  for (std::size_t i = 0; i < d; ++i)
    fvals[i] = cfg.normalization.eval(st.lambda_used[i]);
  st.q = reconstruct(st.eig.u, fvals);

  if (cfg.use_seb) {
    std::vector<double> svals(d);
    for (std::size_t i = 0; i < d; ++i)
      svals[i] = std::exp(-st.lambda_used[i]);
    st.s = reconstruct(st.eig.u, svals);
    st.factor = seb_factor(st.lambda_used);
    st.a = scaled(st.q, *st.factor + 1.0);
  } else {
    st.a = st.q;
  }
  return st;
}

namespace detail {

// Accumulates the backward of R = U f(Lambda~) U^T into an EigGrad, where
// Lambda~ is the (possibly truncated) spectrum the forward used. d_u picks up
// (G+G^T) U f(Lambda~) for every column (f(0) = 0 keeps dropped columns inert
// for sqrt/proot); d_lambda gets f'(lambda_i) (U^T G U)_ii only for the kept
// leading entries, so f' is never evaluated at a truncated zero.
inline void accumulate_fn_backward(const Mat& u,
                                   const std::vector<double>& lambda_used,
                                   std::size_t kept, const SpectralFn& fn,
                                   const Mat& g, EigGrad& acc) {
  const std::size_t d = u.rows;
  Mat gs(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) gs(i, j) = g(i, j) + g(j, i);
  const Mat w = matmul(gs, u);
  for (std::size_t j = 0; j < d; ++j) {
    const double fj = fn.eval(lambda_used[j]);
    for (std::size_t i = 0; i < d; ++i) acc.d_u(i, j) += w(i, j) * fj;
  }
  for (std::size_t i = 0; i < kept; ++i) {
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      double gr = 0.0;
      for (std::size_t c = 0; c < d; ++c) gr += g(r, c) * u(c, i);
      s += u(r, i) * gr;
    }
    acc.d_lambda[i] += fn.deriv(lambda_used[i]) * s;
  }
}

}  // namespace detail

// Backward through the whole head, replaying the cached forward.
//
// With SEB the output is A = (factor + 1) Q, so for G = dl/dA
//   dA = (factor + 1) dQ + Q dfactor
//   dl/dQ      = (factor + 1) G  +  d_factor * dfactor/dQ
//   dl/dS      =                   d_factor * dfactor/dS
// with the scalar d_factor = <G, Q>. The two matrix gradients then flow
// through their spectral functions into a shared EigGrad, the truncation
// mask zeroes d_lambda beyond the kept range, and eig_backward (using the
// untruncated spectrum for the gap matrix) followed by covariance_backward
// finishes the chain.
//
// eig_mask, when given, zeroes d_lambda[i] and column i of d_u for every
// index with eig_mask[i] == false before eig_backward; attribution uses this
// to route gradient through a chosen set of eigenpairs only.
inline Mat gcp_backward(const GcpState& st, const Mat& d_a,
                        const std::vector<bool>* eig_mask = nullptr) {
  const std::size_t d = st.eig.u.rows;
  if (d_a.rows != d || d_a.cols != d)
    throw std::invalid_argument("gcp_backward: gradient is " +
                                std::to_string(d_a.rows) + "x" +
                                std::to_string(d_a.cols) + " for d = " +
                                std::to_string(d));
  if (st.cfg.use_seb && (!st.s || !st.factor))
    throw std::invalid_argument("gcp_backward: state lacks SEB intermediates");
  if (eig_mask && eig_mask->size() != d)
    throw std::invalid_argument("gcp_backward: eig mask size mismatch");
  const std::size_t kept =
      st.cfg.truncate_k ? std::min(*st.cfg.truncate_k, d) : d;

  EigGrad acc;
  acc.d_u = Mat(d, d);
  acc.d_lambda.assign(d, 0.0);

  if (st.cfg.use_seb) {
    const double f = *st.factor;
    const double d_factor = fro_inner(d_a, st.q);
    auto [dfdq, dfds] = seb_factor_backward(st.q, *st.s, f);
    Mat d_q = scaled(d_a, f + 1.0);
    for (std::size_t i = 0; i < d_q.a.size(); ++i)
      d_q.a[i] += d_factor * dfdq.a[i];
    Mat d_s = scaled(dfds, d_factor);
    detail::accumulate_fn_backward(st.eig.u, st.lambda_used, kept,
                                   st.cfg.normalization, d_q, acc);
    detail::accumulate_fn_backward(st.eig.u, st.lambda_used, kept,
                                   SpectralFn::exp_inv(), d_s, acc);
  } else {
    detail::accumulate_fn_backward(st.eig.u, st.lambda_used, kept,
                                   st.cfg.normalization, d_a, acc);
  }

  if (eig_mask) {
    for (std::size_t i = 0; i < d; ++i) {
      if ((*eig_mask)[i]) continue;
      acc.d_lambda[i] = 0.0;
      for (std::size_t r = 0; r < d; ++r) acc.d_u(r, i) = 0.0;
    }
  }

  const Mat d_p = eig_backward(st.eig, acc, st.cfg.k_epsilon);
  return covariance_backward(st.x, d_p);
}

// Row-major upper triangle (column >= row) of a symmetric matrix; the
// classifier consumes this d(d+1)/2 vector.
inline std::vector<double> upper_tri_vec(const Mat& a) {
  require_square(a, "upper_tri_vec");
  const double asym = asymmetry(a);
  if (!(asym <= 1e-8 * std::max(1.0, fro_norm(a))))
    throw std::invalid_argument("upper_tri_vec: asymmetry " +
                                std::to_string(asym) + " exceeds tolerance");
  std::vector<double> v;
  v.reserve(a.rows * (a.rows + 1) / 2);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = r; c < a.cols; ++c) v.push_back(a(r, c));
  return v;
}

// Inverse of upper_tri_vec: symmetric fill. Exact round trip.
inline Mat upper_tri_unvec(const std::vector<double>& v, std::size_t d) {
  if (v.size() != d * (d + 1) / 2)
    throw std::invalid_argument("upper_tri_unvec: got " +
                                std::to_string(v.size()) + " values for d = " +
                                std::to_string(d));
  Mat a(d, d);
  std::size_t k = 0;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r; c < d; ++c) {
      a(r, c) = v[k];
      a(c, r) = v[k];
      ++k;
    }
  return a;
}

// Scatter of a gradient over upper_tri_vec back to matrix form. Entries land
// on the upper triangle only; downstream consumers pair against symmetric
// perturbations, for which this is the correct adjoint.
inline Mat upper_tri_scatter(const std::vector<double>& g, std::size_t d) {
  if (g.size() != d * (d + 1) / 2)
    throw std::invalid_argument("upper_tri_scatter: got " +
                                std::to_string(g.size()) + " values for d = " +
                                std::to_string(d));
  Mat a(d, d);
  std::size_t k = 0;
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = r; c < d; ++c) a(r, c) = g[k++];
  return a;
}

}  // namespace covpool
