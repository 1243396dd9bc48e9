#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/gcp.hpp"
#include "covpool/mat.hpp"
#include "covpool/rng.hpp"

namespace covpool {

// Synthetic feature-map dataset whose class identity is planted in a
// low-variance subspace. In a shared random orthonormal basis, the leading
// noise_rows coordinates carry class-independent noise at noise_scale, the
// trailing signal_dims coordinates carry a class direction g_c on the unit
// circle with per-position amplitude mean_amp + N(0, amp_jitter^2) plus
// isotropic jitter at low_var_scale, and any rows between are inert noise
// at low_var_scale. Spatial centering removes the mean_amp component from
// every pooled covariance, so the class evidence that survives pooling is
// the amp_jitter^2 variance along g_c: a rank-one bump riding on the
// low_var_scale^2 floor, orders of magnitude below the noise rows.
struct DatasetSpec {
  std::size_t num_classes = 5;
  std::size_t n_per_class = 100;
  std::size_t d_in = 12;
  std::size_t n_spatial = 32;
  double noise_scale = 3.0;
  std::size_t noise_rows = 6;
  std::size_t signal_dims = 2;
  double low_var_scale = 0.02;
  double mean_amp = 0.3;
  double amp_jitter = 0.15;
  std::uint64_t seed = 27;  // canonical benchmark draw
};

struct Dataset {
  DatasetSpec spec;
  Mat basis;                        // shared d_in x d_in orthonormal basis
  std::vector<Mat> samples;         // each d_in x n_spatial
  std::vector<std::size_t> labels;  // class per sample
};

namespace detail {

// Random orthonormal basis via modified Gram-Schmidt on a Gaussian draw.
inline Mat random_orthonormal(std::size_t d, Rng& rng) {
  for (int attempt = 0; attempt < 16; ++attempt) {
    Mat b(d, d);
    for (double& v : b.a) v = rng.normal();
    bool ok = true;
    for (std::size_t j = 0; j < d && ok; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t r = 0; r < d; ++r) dot += b(r, j) * b(r, k);
        for (std::size_t r = 0; r < d; ++r) b(r, j) -= dot * b(r, k);
      }
      double nrm = 0.0;
      for (std::size_t r = 0; r < d; ++r) nrm += b(r, j) * b(r, j);
      nrm = std::sqrt(nrm);
      if (nrm < 1e-8) {
        ok = false;
        break;
      }
      for (std::size_t r = 0; r < d; ++r) b(r, j) /= nrm;
    }
    if (ok) return b;
  }
  throw std::runtime_error("random_orthonormal: degenerate draws");
}

}  // namespace detail

inline Dataset gen_dataset(const DatasetSpec& spec) {
  if (spec.num_classes < 2)
    throw std::invalid_argument("gen_dataset: need at least 2 classes");
  if (spec.n_per_class < 1 || spec.n_spatial < 2)
    throw std::invalid_argument("gen_dataset: degenerate sample counts");
  if (spec.signal_dims < 2)
    throw std::invalid_argument("gen_dataset: signal_dims must be >= 2");
  if (spec.noise_rows < 1 ||
      spec.noise_rows + spec.signal_dims > spec.d_in)
    throw std::invalid_argument(
        "gen_dataset: noise_rows + signal_dims must fit in d_in");

  Rng rng(spec.seed);
  Dataset ds;
  ds.spec = spec;
  ds.basis = detail::random_orthonormal(spec.d_in, rng);

  // Unit class directions on a circle in the first two signal coordinates.
  std::vector<std::vector<double>> dir(spec.num_classes,
                                       std::vector<double>(spec.signal_dims, 0.0));
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const double ang =
        2.0 * std::numbers::pi * static_cast<double>(c) /
            static_cast<double>(spec.num_classes) +
        0.3;
    dir[c][0] = std::cos(ang);
    dir[c][1] = std::sin(ang);
  }

  const std::size_t sig0 = spec.d_in - spec.signal_dims;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      Mat coef(spec.d_in, spec.n_spatial);
      for (std::size_t r = 0; r < spec.noise_rows; ++r)
        for (std::size_t j = 0; j < spec.n_spatial; ++j)
          coef(r, j) = spec.noise_scale * rng.normal();
      for (std::size_t r = spec.noise_rows; r < sig0; ++r)
        for (std::size_t j = 0; j < spec.n_spatial; ++j)
          coef(r, j) = spec.low_var_scale * rng.normal();
      for (std::size_t j = 0; j < spec.n_spatial; ++j) {
        const double amp = spec.mean_amp + spec.amp_jitter * rng.normal();
        for (std::size_t r = 0; r < spec.signal_dims; ++r)
          coef(sig0 + r, j) =
              amp * dir[c][r] + spec.low_var_scale * rng.normal();
      }
      ds.samples.push_back(matmul(ds.basis, coef));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

inline Dataset gen_dataset(std::size_t num_classes, std::size_t n_per_class,
                           std::size_t d_in, std::size_t n_spatial,
                           double noise_scale, std::uint64_t seed) {
  DatasetSpec spec;
  spec.num_classes = num_classes;
  spec.n_per_class = n_per_class;
  spec.d_in = d_in;
  spec.n_spatial = n_spatial;
  spec.noise_scale = noise_scale;
  spec.seed = seed;
  return gen_dataset(spec);
}

// Channel projection + optional rectifier + covariance pooling head +
// linear classifier over the upper-triangle vector. The linear stem keeps
// class evidence purely in covariance structure; the rectifier feeds
// per-sample means into channel variances, which smears class signal
// across the whole spectrum.
struct ToyModel {
  Mat proj;               // d x d_in
  Mat w;                  // num_classes x d(d+1)/2
  std::vector<double> b;  // num_classes
  bool with_relu = false;
};

inline ToyModel init_model(std::size_t d, std::size_t d_in,
                           std::size_t num_classes, Rng& rng) {
  ToyModel m;
  m.proj = Mat(d, d_in);
  // Semi-orthogonal stem start: rows of a random orthogonal matrix. Every
  // row has unit norm, so the gain spread across input directions stays
  // narrow from draw to draw.
  const Mat q = detail::random_orthonormal(d_in, rng);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d_in; ++c) m.proj(r, c) = q(r, c);
  m.w = Mat(num_classes, d * (d + 1) / 2);  // zero: uniform softmax start
  m.b.assign(num_classes, 0.0);
  return m;
}

struct ModelCache {
  Mat x;
  Mat pre;        // proj * x
  Mat features;   // rectified
  GcpState gcp;
  std::vector<double> v;       // upper_tri_vec(a)
  std::vector<double> logits;
};

inline ModelCache model_forward(const ToyModel& m, const Mat& x,
                                const GcpConfig& cfg) {
  if (m.proj.cols != x.rows)
    throw std::invalid_argument("model_forward: input has " +
                                std::to_string(x.rows) + " rows, proj expects " +
                                std::to_string(m.proj.cols));
  ModelCache c;
  c.x = x;
  c.pre = matmul(m.proj, x);
  c.features = c.pre;
  if (m.with_relu)
    for (double& v : c.features.a) v = v > 0.0 ? v : 0.0;
  c.gcp = gcp_forward(c.features, cfg);
  c.v = upper_tri_vec(c.gcp.a);
  if (m.w.cols != c.v.size())
    throw std::invalid_argument("model_forward: classifier width " +
                                std::to_string(m.w.cols) + " != " +
                                std::to_string(c.v.size()));
  c.logits.assign(m.w.rows, 0.0);
  for (std::size_t k = 0; k < m.w.rows; ++k) {
    double s = m.b[k];
    for (std::size_t j = 0; j < m.w.cols; ++j) s += m.w(k, j) * c.v[j];
    c.logits[k] = s;
  }
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

inline double cross_entropy(const std::vector<double>& logits,
                            std::size_t label) {
  if (label >= logits.size())
    throw std::invalid_argument("cross_entropy: label out of range");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return std::log(z) - (logits[label] - mx);
}

// dCE/dlogits = softmax - onehot.
inline std::vector<double> cross_entropy_backward(
    const std::vector<double>& logits, std::size_t label) {
  std::vector<double> g = softmax(logits);
  g[label] -= 1.0;
  return g;
}

struct ModelGrads {
  Mat d_proj;
  Mat d_w;
  std::vector<double> d_b;
  Mat d_x;  // filled only when requested
};

// Training backward: true rectifier gradient (gate on the pre-activation).
inline ModelGrads model_backward(const ToyModel& m, const ModelCache& c,
                                 const std::vector<double>& d_logits,
                                 bool need_dx = false) {
  if (d_logits.size() != m.w.rows)
    throw std::invalid_argument("model_backward: logit gradient size mismatch");
  const std::size_t d = c.gcp.a.rows;
  ModelGrads g;
  g.d_w = Mat(m.w.rows, m.w.cols);
  g.d_b.assign(m.b.size(), 0.0);
  std::vector<double> d_v(c.v.size(), 0.0);
  for (std::size_t k = 0; k < m.w.rows; ++k) {
    g.d_b[k] = d_logits[k];
    for (std::size_t j = 0; j < m.w.cols; ++j) {
      g.d_w(k, j) = d_logits[k] * c.v[j];
      d_v[j] += m.w(k, j) * d_logits[k];
    }
  }
  const Mat d_a = upper_tri_scatter(d_v, d);
  Mat d_feat = gcp_backward(c.gcp, d_a);
  if (m.with_relu) {
    for (std::size_t i = 0; i < d_feat.a.size(); ++i)
      if (!(c.pre.a[i] > 0.0)) d_feat.a[i] = 0.0;
  }
  g.d_proj = matmul(d_feat, transpose(c.x));
  if (need_dx) g.d_x = matmul(transpose(m.proj), d_feat);
  return g;
}

}  // namespace covpool
