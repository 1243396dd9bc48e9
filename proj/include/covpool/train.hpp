#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "covpool/attribution.hpp"
#include "covpool/diagnostics.hpp"
#include "covpool/gcp.hpp"
#include "covpool/mat.hpp"
#include "covpool/rng.hpp"
#include "covpool/toy_model.hpp"

namespace covpool {

struct TrainConfig {
  GcpConfig gcp;
  std::size_t d = 8;              // projected channel count
  std::size_t epochs = 200;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-3;       // classifier weights, not bias
  double proj_weight_decay = 1e-4;  // stem projection
  double stem_lr_scale = 7e-4;      // stem step = lr * this; near-frozen regime
  std::size_t batch_size = 17;
  double grad_clip = 5.0;         // global norm; 0 disables
  std::size_t snapshot_every = 10;
  bool with_relu = false;         // rectify the stem before pooling
  std::uint64_t seed = 0;         // init + shuffle stream
};

struct SpectrumSnapshot {
  std::size_t epoch = 0;
  std::vector<std::vector<double>> spectra;  // pooled spectrum per sample
  double median_kappa = 0.0;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
  std::vector<double> train_acc;   // per epoch
  std::vector<double> val_acc;     // per epoch; empty without a val set
  std::vector<SpectrumSnapshot> snapshots;
  ToyModel model;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
    m = 0.5 * (m + v[mid - 1]);
  }
  return m;
}

}  // namespace detail

// Accuracy of the model on a dataset; also collects the pooled spectrum per
// sample when a sink is given.
inline double accuracy(const ToyModel& model, const Dataset& ds,
                       const GcpConfig& cfg,
                       std::vector<std::vector<double>>* spectra = nullptr) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const ModelCache c = model_forward(model, ds.samples[i], cfg);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < c.logits.size(); ++k)
      if (c.logits[k] > c.logits[arg]) arg = k;
    if (arg == ds.labels[i]) ++hits;
    if (spectra) spectra->push_back(c.gcp.eig.lambda);
  }
  return static_cast<double>(hits) / static_cast<double>(ds.samples.size());
}

// Minibatch SGD with momentum; gradients averaged over the batch, weight
// decay applied to proj and classifier weights. A non-finite loss or
// gradient aborts with the offending epoch, sample, and pooled spectrum.
inline TrainReport train(const Dataset& train_set, const Dataset* val_set,
                         const TrainConfig& tc) {
  validate_config(tc.gcp);
  if (tc.epochs < 1 || tc.batch_size < 1)
    throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  const std::size_t n = train_set.samples.size();
  if (n == 0) throw std::invalid_argument("train: empty dataset");

  Rng rng(tc.seed);
  TrainReport rep;
  rep.model = init_model(tc.d, train_set.spec.d_in,
                         train_set.spec.num_classes, rng);
  rep.model.with_relu = tc.with_relu;

  Mat vel_proj(rep.model.proj.rows, rep.model.proj.cols);
  Mat vel_w(rep.model.w.rows, rep.model.w.cols);
  std::vector<double> vel_b(rep.model.b.size(), 0.0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t stop = std::min(start + tc.batch_size, n);
      const double bs = static_cast<double>(stop - start);
      Mat g_proj(rep.model.proj.rows, rep.model.proj.cols);
      Mat g_w(rep.model.w.rows, rep.model.w.cols);
      std::vector<double> g_b(rep.model.b.size(), 0.0);

      for (std::size_t bi = start; bi < stop; ++bi) {
        const std::size_t si = order[bi];
        const ModelCache c =
            model_forward(rep.model, train_set.samples[si], tc.gcp);
        const double loss = cross_entropy(c.logits, train_set.labels[si]);
        if (!std::isfinite(loss)) {
          std::string spec;
          for (double l : c.gcp.eig.lambda) spec += " " + std::to_string(l);
          throw std::runtime_error(
              "train: non-finite loss at epoch " + std::to_string(epoch) +
              ", sample " + std::to_string(si) + ", pooled spectrum:" + spec);
        }
        loss_sum += loss;
        const ModelGrads g = model_backward(
            rep.model, c,
            cross_entropy_backward(c.logits, train_set.labels[si]));
        for (std::size_t i = 0; i < g_proj.a.size(); ++i)
          g_proj.a[i] += g.d_proj.a[i] / bs;
        for (std::size_t i = 0; i < g_w.a.size(); ++i)
          g_w.a[i] += g.d_w.a[i] / bs;
        for (std::size_t i = 0; i < g_b.size(); ++i) g_b[i] += g.d_b[i] / bs;
      }

      for (std::size_t i = 0; i < g_proj.a.size(); ++i)
        g_proj.a[i] += tc.proj_weight_decay * rep.model.proj.a[i];
      for (std::size_t i = 0; i < g_w.a.size(); ++i)
        g_w.a[i] += tc.weight_decay * rep.model.w.a[i];

      double gn = 0.0;
      for (double v : g_proj.a) gn += v * v;
      for (double v : g_w.a) gn += v * v;
      for (double v : g_b) gn += v * v;
      gn = std::sqrt(gn);
      if (!std::isfinite(gn))
        throw std::runtime_error("train: non-finite gradient at epoch " +
                                 std::to_string(epoch));
      if (tc.grad_clip > 0.0 && gn > tc.grad_clip) {
        const double s = tc.grad_clip / gn;
        for (double& v : g_proj.a) v *= s;
        for (double& v : g_w.a) v *= s;
        for (double& v : g_b) v *= s;
      }

      for (std::size_t i = 0; i < vel_proj.a.size(); ++i) {
        vel_proj.a[i] = tc.momentum * vel_proj.a[i] + g_proj.a[i];
        rep.model.proj.a[i] -= tc.lr * tc.stem_lr_scale * vel_proj.a[i];
      }
      for (std::size_t i = 0; i < vel_w.a.size(); ++i) {
        vel_w.a[i] = tc.momentum * vel_w.a[i] + g_w.a[i];
        rep.model.w.a[i] -= tc.lr * vel_w.a[i];
      }
      for (std::size_t i = 0; i < vel_b.size(); ++i) {
        vel_b[i] = tc.momentum * vel_b[i] + g_b[i];
        rep.model.b[i] -= tc.lr * vel_b[i];
      }
    }

    rep.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    const bool snap = tc.snapshot_every > 0 &&
                      (epoch % tc.snapshot_every == 0 || epoch + 1 == tc.epochs);
    std::vector<std::vector<double>> spectra;
    rep.train_acc.push_back(
        accuracy(rep.model, train_set, tc.gcp, snap ? &spectra : nullptr));
    if (val_set)
      rep.val_acc.push_back(accuracy(rep.model, *val_set, tc.gcp));
    if (snap) {
      SpectrumSnapshot ss;
      ss.epoch = epoch;
      std::vector<double> kappas;
      kappas.reserve(spectra.size());
      for (const auto& sp : spectra)
        kappas.push_back(condition_number(sp).value);
      ss.median_kappa = detail::median_of(std::move(kappas));
      ss.spectra = std::move(spectra);
      rep.snapshots.push_back(std::move(ss));
    }
  }
  return rep;
}

// Inference with an arbitrary eigenvalue keep-mask applied before
// normalization; the sweep's subset modes build on this.
inline double subset_accuracy(const ToyModel& model, const Dataset& ds,
                              const GcpConfig& cfg,
                              const std::vector<bool>& keep) {
  validate_config(cfg);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    Mat feat = matmul(model.proj, ds.samples[i]);
    if (model.with_relu)
      for (double& v : feat.a) v = v > 0.0 ? v : 0.0;
    const SymEig eig = sym_eig(pooled_input(feat, cfg));
    const std::size_t d = eig.lambda.size();
    if (keep.size() != d)
      throw std::invalid_argument("subset_accuracy: mask size mismatch");
    std::vector<double> lam = eig.lambda;
    for (std::size_t j = 0; j < d; ++j)
      if (!keep[j]) lam[j] = 0.0;
    lam = clamped_spectrum(cfg.normalization, lam);
    std::vector<double> fvals(d);
    for (std::size_t j = 0; j < d; ++j)
      fvals[j] = cfg.normalization.eval(lam[j]);
    Mat a = reconstruct(eig.u, fvals);
    if (cfg.use_seb) a = scaled(a, seb_factor(lam) + 1.0);
    const std::vector<double> v = upper_tri_vec(a);
    std::size_t arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < model.w.rows; ++k) {
      double s = model.b[k];
      for (std::size_t j = 0; j < model.w.cols; ++j) s += model.w(k, j) * v[j];
      if (s > best) {
        best = s;
        arg = k;
      }
    }
    if (arg == ds.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.samples.size());
}

// Eigenvalue subsets swept at inference time. TopK keeps the k leading
// eigenvalues; FirstPlusSmall keeps the leading one plus the trailing d - k,
// i.e. the small suffix anchored by the dominant eigenpair.
enum class SubsetMode { TopK, FirstPlusSmall };

inline std::vector<bool> subset_keep_mask(std::size_t d, std::size_t k,
                                          SubsetMode mode) {
  if (k < 1 || k > d)
    throw std::invalid_argument("subset_keep_mask: k out of range");
  std::vector<bool> keep(d, false);
  if (mode == SubsetMode::TopK) {
    for (std::size_t i = 0; i < k; ++i) keep[i] = true;
  } else {
    keep[0] = true;
    for (std::size_t i = k; i < d; ++i) keep[i] = true;
  }
  return keep;
}

struct SweepRow {
  std::size_t k = 0;
  SubsetMode mode = SubsetMode::TopK;
  double acc = 0.0;
};

inline std::vector<SweepRow> truncation_sweep(
    const ToyModel& model, const Dataset& ds, const GcpConfig& cfg,
    const std::vector<std::size_t>& ks, SubsetMode mode) {
  std::vector<SweepRow> rows;
  rows.reserve(ks.size());
  const std::size_t d = model.proj.rows;
  for (std::size_t k : ks) {
    SweepRow r;
    r.k = k;
    r.mode = mode;
    r.acc = subset_accuracy(model, ds, cfg, subset_keep_mask(d, k, mode));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace covpool
