#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/gcp.hpp"
#include "covpool/mat.hpp"
#include "covpool/spectral.hpp"
#include "covpool/sym_eig.hpp"
#include "covpool/toy_model.hpp"

namespace covpool {

// Eigenvalue subsets relative to a split index t: Large keeps the leading t,
// Small keeps the trailing d - t, All keeps everything.
enum class EigSelection { Large, Small, All };

inline const char* selection_name(EigSelection s) {
  switch (s) {
    case EigSelection::Large:
      return "large";
    case EigSelection::Small:
      return "small";
    case EigSelection::All:
      return "all";
  }
  return "?";
}

inline std::vector<bool> selection_mask(std::size_t d, EigSelection sel,
                                        std::size_t t) {
  if (t > d)
    throw std::invalid_argument("selection_mask: t = " + std::to_string(t) +
                                " exceeds d = " + std::to_string(d));
  std::vector<bool> m(d, false);
  for (std::size_t i = 0; i < d; ++i)
    m[i] = sel == EigSelection::All || (sel == EigSelection::Large && i < t) ||
           (sel == EigSelection::Small && i >= t);
  return m;
}

// Masked copy of the spectrum: unselected entries are zeroed.
inline std::vector<double> select_eigs(const std::vector<double>& lambda,
                                       EigSelection sel, std::size_t t) {
  const std::vector<bool> m = selection_mask(lambda.size(), sel, t);
  std::vector<double> out = lambda;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!m[i]) out[i] = 0.0;
  return out;
}

// Spectral projection P_sel = U diag(selected lambda) U^T. Large and Small
// partition: P_L + P_S = P.
inline Mat project_subspace(const SymEig& eig, EigSelection sel,
                            std::size_t t) {
  return reconstruct(eig.u, select_eigs(eig.lambda, sel, t));
}

// Imputed rectifier backward rules used by attribution. Both gate on the
// incoming gradient p, not on the forward activation:
//   Vanilla: p > 0 -> 1, else 0
//   DeConv:  p > 0 -> p, else 0
enum class ReluRule { Vanilla, DeConv };

inline Mat relu_backward(ReluRule rule, const Mat& upstream) {
  Mat r = upstream;
  for (double& v : r.a) {
    if (rule == ReluRule::Vanilla)
      v = v > 0.0 ? 1.0 : 0.0;
    else
      v = v > 0.0 ? v : 0.0;
  }
  return r;
}

// Activation-gated variants (optional, off by default in SaliencyOptions):
// the gate is the forward pre-activation sign instead of the gradient sign.
inline Mat relu_backward_gated(ReluRule rule, const Mat& upstream,
                               const Mat& pre) {
  require_same_shape(upstream, pre, "relu_backward_gated");
  Mat r = upstream;
  for (std::size_t i = 0; i < r.a.size(); ++i) {
    const bool on = pre.a[i] > 0.0;
    if (rule == ReluRule::Vanilla)
      r.a[i] = on ? 1.0 : 0.0;
    else
      r.a[i] = on ? r.a[i] : 0.0;
  }
  return r;
}

// Pearson correlation over all entries, in [-1, 1].
inline double corr_coeff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "corr_coeff");
  const std::size_t n = a.a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.a[i];
    mb += b.a[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cab = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.a[i] - ma;
    const double db = b.a[i] - mb;
    cab += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0)
    throw std::domain_error("corr_coeff: constant input, correlation undefined");
  return cab / std::sqrt(va * vb);
}

inline double mae(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i)
    s += std::fabs(a.a[i] - b.a[i]);
  return s / static_cast<double>(a.a.size());
}

// Perturbation objectives over the covariance M of the perturbed input's
// features, against fixed targets P_L and P_S from the original input:
//   l1 =  ||M - P_L||_F^2
//   l2 = -||M - P_L||_F^2 + ||M - P_S||_F^2
//      = -2 <M, P_S - P_L> + (||P_S||_F^2 - ||P_L||_F^2)
inline double l1_loss(const Mat& m, const Mat& p_l) {
  require_same_shape(m, p_l, "l1_loss");
  const double n = fro_norm(sub(m, p_l));
  return n * n;
}

inline double l2_loss(const Mat& m, const Mat& p_l, const Mat& p_s) {
  require_same_shape(m, p_l, "l2_loss");
  require_same_shape(m, p_s, "l2_loss");
  const double nl = fro_norm(sub(m, p_l));
  const double ns = fro_norm(sub(m, p_s));
  return -nl * nl + ns * ns;
}

// Trace-inequality slack: sum_i sigma_i(a) sigma_i(b) - |<a, b>|, both
// spectra sorted non-increasing. Nonnegative for any pair of symmetric
// positive semidefinite matrices; zero when the eigenbases align with
// matched order.
inline double vn_trace_gap(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "vn_trace_gap");
  const SymEig ea = sym_eig(a);
  const SymEig eb = sym_eig(b);
  auto check_spsd = [](const SymEig& e, const char* which) {
    const double lmax = std::max(e.lambda.empty() ? 0.0 : e.lambda[0], 0.0);
    if (!e.lambda.empty() && e.lambda.back() < -1e-10 * std::max(lmax, 1.0))
      throw std::domain_error(std::string("vn_trace_gap: ") + which +
                              " input is not positive semidefinite");
  };
  check_spsd(ea, "first");
  check_spsd(eb, "second");
  double s = 0.0;
  for (std::size_t i = 0; i < ea.lambda.size(); ++i)
    s += std::max(ea.lambda[i], 0.0) * std::max(eb.lambda[i], 0.0);
  return s - std::fabs(fro_inner(a, b));
}

struct SaliencyOptions {
  ReluRule rule = ReluRule::DeConv;
  bool gate_on_activation = false;  // off: printed gradient-gated rules
};

struct SaliencyMap {
  Mat values;  // |dscore/dinput|, elementwise
  EigSelection sel = EigSelection::All;
  ReluRule rule = ReluRule::DeConv;
  std::size_t seed_class = 0;  // class whose score was attributed
};

// Input attribution routed through a chosen eigenpair subset. The forward
// pass runs unchanged; the backward seed is the predicted-class score, and
// at the eigendecomposition the accumulated (dl/dU, dl/dLambda) is masked to
// the selected eigenpairs before flowing back to the input. At the model's
// rectifier the imputed rule replaces the true gradient; a model without a
// rectifier passes the gradient through, so All-selection saliency equals
// the raw score gradient magnitude there.
inline SaliencyMap eigen_saliency(const ToyModel& model, const Mat& x,
                                  const GcpConfig& cfg, EigSelection sel,
                                  std::size_t t,
                                  const SaliencyOptions& opt = {}) {
  const ModelCache c = model_forward(model, x, cfg);
  std::size_t cls = 0;
  for (std::size_t k = 1; k < c.logits.size(); ++k)
    if (c.logits[k] > c.logits[cls]) cls = k;

  // d(score_cls)/dv = row cls of the classifier.
  const std::size_t d = c.gcp.a.rows;
  std::vector<double> d_v(model.w.cols);
  for (std::size_t j = 0; j < model.w.cols; ++j) d_v[j] = model.w(cls, j);
  const Mat d_a = upper_tri_scatter(d_v, d);

  const std::vector<bool> mask = selection_mask(d, sel, t);
  Mat d_feat = gcp_backward(c.gcp, d_a, &mask);
  if (model.with_relu)
    d_feat = opt.gate_on_activation
                 ? relu_backward_gated(opt.rule, d_feat, c.pre)
                 : relu_backward(opt.rule, d_feat);
  Mat d_x = matmul(transpose(model.proj), d_feat);
  for (double& v : d_x.a) v = std::fabs(v);

  SaliencyMap out;
  out.values = std::move(d_x);
  out.sel = sel;
  out.rule = opt.rule;
  out.seed_class = cls;
  return out;
}

enum class PerturbMode { L1, L2 };

struct PerturbTrace {
  Mat image;                        // final perturbed input
  std::vector<double> loss_history; // loss at each step before the update
  PerturbMode mode = PerturbMode::L1;
};

// Plain gradient descent on the input against l1 or l2, with the model
// frozen. Targets P_L and P_S come from the unperturbed input's feature
// covariance and stay fixed. The rectifier uses its true gradient here;
// this is optimization, not attribution.
inline PerturbTrace perturb(const ToyModel& model, const Mat& x0,
                            std::size_t t, PerturbMode mode,
                            std::size_t steps = 1000, double lr = 0.1) {
  if (steps < 1) throw std::invalid_argument("perturb: steps must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("perturb: lr must be positive");

  auto features_of = [&](const Mat& x) {
    Mat f = matmul(model.proj, x);
    if (model.with_relu)
      for (double& v : f.a) v = v > 0.0 ? v : 0.0;
    return f;
  };

  const Mat f0 = features_of(x0);
  const SymEig eig0 = sym_eig(covariance(f0));
  const Mat p_l = project_subspace(eig0, EigSelection::Large, t);
  const Mat p_s = project_subspace(eig0, EigSelection::Small, t);

  PerturbTrace tr;
  tr.mode = mode;
  tr.image = x0;
  tr.loss_history.reserve(steps);
  for (std::size_t step = 0; step < steps; ++step) {
    const Mat pre = matmul(model.proj, tr.image);
    Mat feat = pre;
    if (model.with_relu)
      for (double& v : feat.a) v = v > 0.0 ? v : 0.0;
    const Mat m = covariance(feat);
    const double loss =
        mode == PerturbMode::L1 ? l1_loss(m, p_l) : l2_loss(m, p_l, p_s);
    if (!std::isfinite(loss))
      throw std::runtime_error("perturb: diverged at step " +
                               std::to_string(step));
    tr.loss_history.push_back(loss);

    // dl/dM: 2(M - P_L) for l1; constant 2(P_L - P_S) for l2.
    Mat d_m = mode == PerturbMode::L1 ? scaled(sub(m, p_l), 2.0)
                                      : scaled(sub(p_l, p_s), 2.0);
    Mat d_feat = covariance_backward(feat, d_m);
    if (model.with_relu) {
      for (std::size_t i = 0; i < d_feat.a.size(); ++i)
        if (!(pre.a[i] > 0.0)) d_feat.a[i] = 0.0;
    }
    const Mat d_x = matmul(transpose(model.proj), d_feat);
    for (std::size_t i = 0; i < tr.image.a.size(); ++i)
      tr.image.a[i] -= lr * d_x.a[i];
  }
  return tr;
}

}  // namespace covpool
