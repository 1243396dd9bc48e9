#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "covpool/covpool.hpp"

using namespace covpool;
using Catch::Approx;

namespace {

// Small spec for fast structural tests; the benchmark defaults stay in
// DatasetSpec itself.
DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.num_classes = 3;
  s.n_per_class = 6;
  s.d_in = 8;
  s.n_spatial = 12;
  s.noise_rows = 4;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("gen_dataset is deterministic and shaped as declared") {
  const DatasetSpec spec = tiny_spec();
  const Dataset a = gen_dataset(spec);
  const Dataset b = gen_dataset(spec);
  REQUIRE(a.samples.size() == 18);
  REQUIRE(a.labels.size() == 18);
  REQUIRE(a.basis.rows == 8);
  REQUIRE(max_abs(sub(a.basis, b.basis)) == 0.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    REQUIRE(a.samples[i].rows == 8);
    REQUIRE(a.samples[i].cols == 12);
    REQUIRE(max_abs(sub(a.samples[i], b.samples[i])) == 0.0);
    REQUIRE(a.labels[i] == b.labels[i]);
    REQUIRE(a.labels[i] == i / 6);
  }
  const Mat btb = matmul(transpose(a.basis), a.basis);
  REQUIRE(max_abs(sub(btb, Mat::identity(8))) < 1e-10);
}

TEST_CASE("gen_dataset validates its sizes") {
  DatasetSpec s = tiny_spec();
  s.num_classes = 1;
  REQUIRE_THROWS_AS(gen_dataset(s), std::invalid_argument);
  s = tiny_spec();
  s.signal_dims = 1;
  REQUIRE_THROWS_AS(gen_dataset(s), std::invalid_argument);
  s = tiny_spec();
  s.noise_rows = 7;  // 7 + 2 > 8
  REQUIRE_THROWS_AS(gen_dataset(s), std::invalid_argument);
}

TEST_CASE("class means separate along the signal rows") {
  // Generator self-test: in basis coordinates, per-class mean directions in
  // the trailing signal rows sit > 5x the within-class spread apart.
  const Dataset ds = gen_dataset(DatasetSpec{});
  const DatasetSpec& sp = ds.spec;
  const std::size_t sig0 = sp.d_in - sp.signal_dims;
  const Mat bt = transpose(ds.basis);

  std::vector<std::vector<double>> means(
      ds.samples.size(), std::vector<double>(sp.signal_dims, 0.0));
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Mat coef = matmul(bt, ds.samples[i]);
    for (std::size_t r = 0; r < sp.signal_dims; ++r) {
      double m = 0.0;
      for (std::size_t j = 0; j < coef.cols; ++j) m += coef(sig0 + r, j);
      means[i][r] = m / static_cast<double>(coef.cols);
    }
  }

  std::vector<std::vector<double>> centroid(
      sp.num_classes, std::vector<double>(sp.signal_dims, 0.0));
  for (std::size_t i = 0; i < means.size(); ++i)
    for (std::size_t r = 0; r < sp.signal_dims; ++r)
      centroid[ds.labels[i]][r] +=
          means[i][r] / static_cast<double>(sp.n_per_class);

  double spread = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    double d2 = 0.0;
    for (std::size_t r = 0; r < sp.signal_dims; ++r) {
      const double d = means[i][r] - centroid[ds.labels[i]][r];
      d2 += d * d;
    }
    spread += std::sqrt(d2) / static_cast<double>(means.size());
  }

  double min_sep = 1e300;
  for (std::size_t a = 0; a < sp.num_classes; ++a) {
    for (std::size_t b = a + 1; b < sp.num_classes; ++b) {
      double d2 = 0.0;
      for (std::size_t r = 0; r < sp.signal_dims; ++r) {
        const double d = centroid[a][r] - centroid[b][r];
        d2 += d * d;
      }
      min_sep = std::min(min_sep, std::sqrt(d2));
    }
  }
  INFO("separation " << min_sep << " spread " << spread);
  REQUIRE(min_sep > 5.0 * spread);
}

TEST_CASE("per-sample covariance energy is dominated by the noise rows") {
  const Dataset ds = gen_dataset(DatasetSpec{});
  const std::size_t t = ds.spec.noise_rows;
  for (std::size_t i = 0; i < ds.samples.size(); i += 50) {
    const SymEig e = sym_eig(covariance(ds.samples[i]));
    REQUIRE(energy_fraction(e.lambda, t) < 0.01);
  }
}

TEST_CASE("init_model starts semi-orthogonal with a zero classifier") {
  Rng rng(17);
  const ToyModel m = init_model(4, 8, 5, rng);
  REQUIRE(m.proj.rows == 4);
  REQUIRE(m.proj.cols == 8);
  const Mat ppt = matmul(m.proj, transpose(m.proj));
  REQUIRE(max_abs(sub(ppt, Mat::identity(4))) < 1e-10);
  REQUIRE(max_abs(m.w) == 0.0);
  for (double b : m.b) REQUIRE(b == 0.0);
}

TEST_CASE("fresh model scores every class evenly") {
  Rng rng(29);
  const ToyModel m = init_model(3, 8, 5, rng);
  const Dataset ds = gen_dataset(tiny_spec());
  GcpConfig cfg;
  cfg.ridge = 1e-8;
  const ModelCache c = model_forward(m, ds.samples[0], cfg);
  for (double l : c.logits) REQUIRE(l == 0.0);
  REQUIRE(cross_entropy(c.logits, 0) == Approx(std::log(5.0)).margin(1e-12));
  const auto g = cross_entropy_backward(c.logits, 2);
  for (std::size_t k = 0; k < g.size(); ++k)
    REQUIRE(g[k] == Approx(0.2 - (k == 2 ? 1.0 : 0.0)).margin(1e-12));
}

TEST_CASE("model_forward validates shapes") {
  Rng rng(97);
  const ToyModel m = init_model(3, 8, 5, rng);
  GcpConfig cfg;
  REQUIRE_THROWS_AS(model_forward(m, Mat(7, 10), cfg), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves the model at its init") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig tc;
  tc.d = 4;
  tc.epochs = 2;
  tc.lr = 0.0;
  tc.batch_size = 5;
  tc.gcp.ridge = 1e-8;
  tc.seed = 3;
  const TrainReport rep = train(ds, nullptr, tc);

  Rng rng(tc.seed);
  const ToyModel fresh = init_model(tc.d, ds.spec.d_in, ds.spec.num_classes, rng);
  REQUIRE(max_abs(sub(rep.model.proj, fresh.proj)) == 0.0);
  REQUIRE(max_abs(sub(rep.model.w, fresh.w)) == 0.0);
}

TEST_CASE("training reduces the loss on the tiny dataset") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig tc;
  tc.d = 4;
  tc.epochs = 15;
  tc.batch_size = 6;
  tc.gcp.ridge = 1e-8;
  tc.snapshot_every = 5;
  const TrainReport rep = train(ds, &ds, tc);
  REQUIRE(rep.epoch_loss.size() == 15);
  REQUIRE(rep.train_acc.size() == 15);
  REQUIRE(rep.val_acc.size() == 15);
  REQUIRE(rep.epoch_loss.back() < rep.epoch_loss.front());
  REQUIRE_FALSE(rep.snapshots.empty());
  REQUIRE(rep.snapshots.front().epoch == 0);
  REQUIRE(rep.snapshots.back().epoch == 14);
  for (const auto& snap : rep.snapshots) {
    REQUIRE(snap.spectra.size() == ds.samples.size());
    REQUIRE(snap.median_kappa > 0.0);
  }
}

TEST_CASE("train validates its configuration") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig tc;
  tc.epochs = 0;
  REQUIRE_THROWS_AS(train(ds, nullptr, tc), std::invalid_argument);
  tc = TrainConfig{};
  tc.gcp.k_epsilon = 0.0;
  REQUIRE_THROWS_AS(train(ds, nullptr, tc), std::invalid_argument);
}

TEST_CASE("subset masks follow both sweep conventions") {
  const auto top = subset_keep_mask(4, 2, SubsetMode::TopK);
  REQUIRE(top == std::vector<bool>{true, true, false, false});
  const auto fps = subset_keep_mask(4, 3, SubsetMode::FirstPlusSmall);
  REQUIRE(fps == std::vector<bool>{true, false, false, true});
  // Boundary semantics: k = 1 keeps everything, k = d keeps lambda_1 only.
  const auto full = subset_keep_mask(4, 1, SubsetMode::FirstPlusSmall);
  REQUIRE(full == std::vector<bool>{true, true, true, true});
  const auto lone = subset_keep_mask(4, 4, SubsetMode::FirstPlusSmall);
  REQUIRE(lone == std::vector<bool>{true, false, false, false});
  REQUIRE_THROWS_AS(subset_keep_mask(4, 0, SubsetMode::TopK),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(subset_keep_mask(4, 5, SubsetMode::TopK),
                    std::invalid_argument);
}

TEST_CASE("keeping every eigenvalue reproduces plain accuracy") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig tc;
  tc.d = 4;
  tc.epochs = 8;
  tc.batch_size = 6;
  tc.gcp.ridge = 1e-8;
  const TrainReport rep = train(ds, nullptr, tc);
  const double plain = accuracy(rep.model, ds, tc.gcp);
  const double kept =
      subset_accuracy(rep.model, ds, tc.gcp, std::vector<bool>(4, true));
  REQUIRE(plain == kept);
}

TEST_CASE("truncation_sweep rows agree with direct subset calls") {
  const Dataset ds = gen_dataset(tiny_spec());
  TrainConfig tc;
  tc.d = 4;
  tc.epochs = 8;
  tc.batch_size = 6;
  tc.gcp.ridge = 1e-8;
  const TrainReport rep = train(ds, nullptr, tc);
  const std::vector<std::size_t> ks{1, 2, 4};
  const auto rows =
      truncation_sweep(rep.model, ds, tc.gcp, ks, SubsetMode::TopK);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(rows[i].k == ks[i]);
    const double direct = subset_accuracy(
        rep.model, ds, tc.gcp, subset_keep_mask(4, ks[i], SubsetMode::TopK));
    REQUIRE(rows[i].acc == direct);
  }
}

TEST_CASE("accuracy spectra sink collects one spectrum per sample") {
  const Dataset ds = gen_dataset(tiny_spec());
  Rng rng(7);
  const ToyModel m = init_model(4, 8, 3, rng);
  GcpConfig cfg;
  cfg.ridge = 1e-8;
  std::vector<std::vector<double>> spectra;
  accuracy(m, ds, cfg, &spectra);
  REQUIRE(spectra.size() == ds.samples.size());
  for (const auto& sp : spectra) REQUIRE(sp.size() == 4);
}
