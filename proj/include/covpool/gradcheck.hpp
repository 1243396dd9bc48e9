#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/gcp.hpp"
#include "covpool/mat.hpp"
#include "covpool/rng.hpp"
#include "covpool/spectral.hpp"
#include "covpool/sym_eig.hpp"
#include "covpool/toy_model.hpp"

namespace covpool {

using ScalarFn = std::function<double(const Mat&)>;

// Central differences with per-entry step 1e-5 * max(1, |entry|).
inline Mat fd_grad(const ScalarFn& f, const Mat& x) {
  Mat g(x.rows, x.cols);
  Mat w = x;
  for (std::size_t i = 0; i < x.a.size(); ++i) {
    const double h = 1e-5 * std::max(1.0, std::fabs(x.a[i]));
    const double keep = w.a[i];
    w.a[i] = keep + h;
    const double fp = f(w);
    w.a[i] = keep - h;
    const double fm = f(w);
    w.a[i] = keep;
    g.a[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Symmetric-input variant: (i, j) and (j, i) move together so the probe
// stays in the symmetric domain. The paired step doubles the off-diagonal
// response, so those estimates are halved; the result is the symmetric
// gradient the eigen backward produces.
inline Mat fd_grad_sym(const ScalarFn& f, const Mat& p) {
  require_square(p, "fd_grad_sym");
  Mat g(p.rows, p.cols);
  Mat w = p;
  for (std::size_t i = 0; i < p.rows; ++i) {
    for (std::size_t j = i; j < p.cols; ++j) {
      const double h = 1e-5 * std::max(1.0, std::fabs(p(i, j)));
      const double keep = w(i, j);
      w(i, j) = keep + h;
      w(j, i) = keep + h;
      const double fp = f(w);
      w(i, j) = keep - h;
      w(j, i) = keep - h;
      const double fm = f(w);
      w(i, j) = keep;
      w(j, i) = keep;
      double d = (fp - fm) / (2.0 * h);
      if (i != j) d *= 0.5;
      g(i, j) = d;
      g(j, i) = d;
    }
  }
  return g;
}

inline double rel_err(const Mat& analytic, const Mat& fd) {
  require_same_shape(analytic, fd, "rel_err");
  return fro_norm(sub(analytic, fd)) / std::max(fro_norm(fd), 1e-12);
}

namespace detail {

// n x d with orthonormal columns, all orthogonal to the ones vector, so a
// data matrix built on it row-centers to itself. Needs n >= d + 1.
inline Mat orthonormal_perp_ones(std::size_t n, std::size_t d, Rng& rng) {
  if (n < d + 1)
    throw std::invalid_argument("orthonormal_perp_ones: need n >= d + 1");
  Mat w(n, d);
  for (std::size_t c = 0; c < d; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < 16 && !placed; ++attempt) {
      std::vector<double> v(n);
      double mean = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        v[r] = rng.normal();
        mean += v[r];
      }
      mean /= static_cast<double>(n);
      for (double& x : v) x -= mean;
      for (std::size_t pc = 0; pc < c; ++pc) {
        double dot = 0.0;
        for (std::size_t r = 0; r < n; ++r) dot += v[r] * w(r, pc);
        for (std::size_t r = 0; r < n; ++r) v[r] -= dot * w(r, pc);
      }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t r = 0; r < n; ++r) w(r, c) = v[r] / nrm;
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("orthonormal_perp_ones: degenerate draw");
  }
  return w;
}

}  // namespace detail

// d x n data matrix whose row covariance is exactly U diag(lambda) U^T for a
// random orthonormal U: X = U diag(sqrt(n lambda)) W^T + mean, with W's
// columns orthonormal and perpendicular to ones. Fixing the spectrum keeps
// eigengaps away from zero so finite differences stay valid.
inline Mat gapped_data(std::size_t d, std::size_t n,
                       const std::vector<double>& lambda, double mean,
                       Rng& rng) {
  if (lambda.size() != d)
    throw std::invalid_argument("gapped_data: lambda size mismatch");
  const Mat u = detail::random_orthonormal(d, rng);
  const Mat w = detail::orthonormal_perp_ones(n, d, rng);
  Mat x(d, n, mean);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k)
        s += u(r, k) * std::sqrt(static_cast<double>(n) * lambda[k]) * w(c, k);
      x(r, c) += s;
    }
  return x;
}

// Geometric spectrum with jitter; ratio ~0.55 keeps every gap a few percent
// of the leading eigenvalue and the floor far from the log domain cutoff.
inline std::vector<double> gapped_spectrum(std::size_t d, Rng& rng) {
  std::vector<double> lam(d);
  double v = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    lam[i] = v * (1.0 + 0.1 * (rng.uniform() - 0.5));
    v *= 0.55;
  }
  std::sort(lam.begin(), lam.end(), std::greater<double>());
  return lam;
}

enum class GradOp {
  Covariance,
  MatFnSqrt,
  MatFnProot,
  MatFnLog,
  MatFnExpInv,
  Eig,
  SebFactor,
  Gcp,
  GcpSeb,
  GcpTrunc,
  Model,
};

inline const char* grad_op_name(GradOp op) {
  switch (op) {
    case GradOp::Covariance: return "covariance";
    case GradOp::MatFnSqrt: return "mat_fn_sqrt";
    case GradOp::MatFnProot: return "mat_fn_proot";
    case GradOp::MatFnLog: return "mat_fn_log";
    case GradOp::MatFnExpInv: return "mat_fn_exp_inv";
    case GradOp::Eig: return "eig";
    case GradOp::SebFactor: return "seb_factor";
    case GradOp::Gcp: return "gcp";
    case GradOp::GcpSeb: return "gcp_seb";
    case GradOp::GcpTrunc: return "gcp_trunc";
    case GradOp::Model: return "model";
  }
  throw std::logic_error("grad_op_name: unknown op");
}

inline GradOp parse_grad_op(const std::string& name) {
  for (GradOp op :
       {GradOp::Covariance, GradOp::MatFnSqrt, GradOp::MatFnProot,
        GradOp::MatFnLog, GradOp::MatFnExpInv, GradOp::Eig, GradOp::SebFactor,
        GradOp::Gcp, GradOp::GcpSeb, GradOp::GcpTrunc, GradOp::Model})
    if (name == grad_op_name(op)) return op;
  throw std::invalid_argument("unknown gradcheck op: " + name);
}

inline std::vector<GradOp> all_grad_ops() {
  return {GradOp::Covariance, GradOp::MatFnSqrt, GradOp::MatFnProot,
          GradOp::MatFnLog,   GradOp::MatFnExpInv, GradOp::Eig,
          GradOp::SebFactor,  GradOp::Gcp,        GradOp::GcpSeb,
          GradOp::GcpTrunc,   GradOp::Model};
}

// Acceptance tolerance on the Frobenius relative error. Plain ops check
// against central differences to ~1e-6 at best; compositions through the
// eigen backward accumulate a little more.
inline double grad_op_tol(GradOp op) {
  switch (op) {
    case GradOp::Covariance: return 1e-6;
    case GradOp::MatFnSqrt:
    case GradOp::MatFnProot:
    case GradOp::MatFnLog:
    case GradOp::MatFnExpInv:
    case GradOp::Eig:
    case GradOp::SebFactor: return 1e-4;
    case GradOp::Gcp:
    case GradOp::GcpSeb:
    case GradOp::GcpTrunc:
    case GradOp::Model: return 1e-3;
  }
  throw std::logic_error("grad_op_tol: unknown op");
}

struct GradTrial {
  std::size_t trial = 0;
  double max_rel_err = 0.0;
  bool pass = false;
};

namespace detail {

inline Mat random_mat(std::size_t r, std::size_t c, double scale, Rng& rng) {
  Mat m(r, c);
  for (double& v : m.a) v = scale * rng.normal();
  return m;
}

inline double run_mat_fn_trial(const SpectralFn& fn, Rng& rng) {
  const std::size_t d = 5;
  const std::vector<double> lam = gapped_spectrum(d, rng);
  const Mat u = random_orthonormal(d, rng);
  const Mat p = reconstruct(u, lam);
  const Mat c = random_mat(d, d, 1.0, rng);
  const ScalarFn loss = [&](const Mat& m) {
    return fro_inner(c, mat_fn(sym_eig(m), fn));
  };
  const SymEig eig = sym_eig(p);
  const EigGrad eg = mat_fn_backward(eig, fn, c);
  const Mat analytic = eig_backward(eig, eg, 1e-12);
  return rel_err(analytic, fd_grad_sym(loss, p));
}

inline double run_eig_trial(Rng& rng) {
  const std::size_t d = 5;
  const std::vector<double> lam = gapped_spectrum(d, rng);
  const Mat u = random_orthonormal(d, rng);
  const Mat p = reconstruct(u, lam);
  EigGrad eg;
  eg.d_u = random_mat(d, d, 1.0, rng);
  eg.d_lambda.resize(d);
  for (double& v : eg.d_lambda) v = rng.normal();
  const ScalarFn loss = [&](const Mat& m) {
    const SymEig e = sym_eig(m);
    double l = fro_inner(eg.d_u, e.u);
    for (std::size_t i = 0; i < d; ++i) l += eg.d_lambda[i] * e.lambda[i];
    return l;
  };
  const Mat analytic = eig_backward(sym_eig(p), eg, 1e-12);
  return rel_err(analytic, fd_grad_sym(loss, p));
}

inline double run_seb_factor_trial(Rng& rng) {
  const std::size_t d = 4;
  const Mat q = symmetrized(random_mat(d, d, 1.0, rng));
  const Mat s = symmetrized(random_mat(d, d, 1.0, rng));
  const auto factor_of = [](const Mat& qq, const Mat& ss) {
    return fro_norm(matmul(qq, transpose(ss)));
  };
  const double f = factor_of(q, s);
  const auto [dq, ds] = seb_factor_backward(q, s, f);
  const double eq = rel_err(
      dq, fd_grad([&](const Mat& m) { return factor_of(m, s); }, q));
  const double es = rel_err(
      ds, fd_grad([&](const Mat& m) { return factor_of(q, m); }, s));
  return std::max(eq, es);
}

inline double run_gcp_trial(const GcpConfig& cfg, Rng& rng) {
  const std::size_t d = 5, n = 12;
  const std::vector<double> lam = gapped_spectrum(d, rng);
  const Mat x = gapped_data(d, n, lam, 0.3, rng);
  const Mat c = random_mat(d, d, 1.0, rng);
  const ScalarFn loss = [&](const Mat& m) {
    return fro_inner(c, gcp_forward(m, cfg).a);
  };
  const Mat analytic = gcp_backward(gcp_forward(x, cfg), c);
  return rel_err(analytic, fd_grad(loss, x));
}

// Full model chain, loss at the cross entropy. The draw is rejected while
// any rectifier input sits inside the finite-difference step or the feature
// spectrum is nearly degenerate; both break the FD premise, not the chain.
inline double run_model_trial(Rng& rng, bool with_relu) {
  const std::size_t d = 5, d_in = 6, n = 10, classes = 3;
  GcpConfig cfg;
  cfg.ridge = 1e-8;  // the training harness runs with loading on
  ToyModel m = init_model(d, d_in, classes, rng);
  m.with_relu = with_relu;
  for (double& v : m.w.a) v = 0.5 * rng.normal();
  for (double& v : m.b) v = 0.1 * rng.normal();
  const std::size_t label = 1;
  for (int attempt = 0; attempt < 50; ++attempt) {
    const Mat x = random_mat(d_in, n, 1.0, rng);
    const ModelCache cache = model_forward(m, x, cfg);
    double min_pre = std::numeric_limits<double>::infinity();
    for (double v : cache.pre.a) min_pre = std::min(min_pre, std::fabs(v));
    double min_gap = std::numeric_limits<double>::infinity();
    const auto& lam = cache.gcp.eig.lambda;
    for (std::size_t i = 0; i + 1 < lam.size(); ++i)
      min_gap = std::min(min_gap, lam[i] - lam[i + 1]);
    if (min_pre < 1e-4 || min_gap < 1e-3) continue;
    const ScalarFn loss = [&](const Mat& xx) {
      return cross_entropy(model_forward(m, xx, cfg).logits, label);
    };
    const ModelGrads g = model_backward(
        m, cache, cross_entropy_backward(cache.logits, label), true);
    return rel_err(g.d_x, fd_grad(loss, x));
  }
  throw std::runtime_error("run_model_trial: no FD-safe draw in 50 attempts");
}

}  // namespace detail

inline double run_grad_trial(GradOp op, Rng& rng) {
  switch (op) {
    case GradOp::Covariance: {
      const Mat x = detail::random_mat(5, 8, 1.0, rng);
      const Mat c = detail::random_mat(5, 5, 1.0, rng);
      const ScalarFn loss = [&](const Mat& m) {
        return fro_inner(c, covariance(m));
      };
      return rel_err(covariance_backward(x, c), fd_grad(loss, x));
    }
    case GradOp::MatFnSqrt:
      return detail::run_mat_fn_trial(SpectralFn::sqrt(), rng);
    case GradOp::MatFnProot:
      return detail::run_mat_fn_trial(SpectralFn::proot(3), rng);
    case GradOp::MatFnLog:
      return detail::run_mat_fn_trial(SpectralFn::log(), rng);
    case GradOp::MatFnExpInv:
      return detail::run_mat_fn_trial(SpectralFn::exp_inv(), rng);
    case GradOp::Eig: return detail::run_eig_trial(rng);
    case GradOp::SebFactor: return detail::run_seb_factor_trial(rng);
    case GradOp::Gcp: {
      GcpConfig cfg;
      return detail::run_gcp_trial(cfg, rng);
    }
    case GradOp::GcpSeb: {
      GcpConfig cfg;
      cfg.use_seb = true;
      return detail::run_gcp_trial(cfg, rng);
    }
    case GradOp::GcpTrunc: {
      GcpConfig cfg;
      cfg.truncate_k = 3;
      return detail::run_gcp_trial(cfg, rng);
    }
    case GradOp::Model: {
      const bool with_relu = rng.uniform() < 0.5;  // both stem paths covered
      return detail::run_model_trial(rng, with_relu);
    }
  }
  throw std::logic_error("run_grad_trial: unknown op");
}

inline std::vector<GradTrial> run_gradcheck(GradOp op, std::size_t trials,
                                            std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("run_gradcheck: trials >= 1");
  const double tol = grad_op_tol(op);
  std::vector<GradTrial> rows;
  rows.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(seed + 1000003 * t);
    GradTrial row;
    row.trial = t;
    row.max_rel_err = run_grad_trial(op, rng);
    row.pass = row.max_rel_err <= tol;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace covpool
