#include <catch_amalgamated.hpp>

#include <cmath>

#include "covpool/covpool.hpp"

using namespace covpool;
using Catch::Approx;

namespace {

Mat signal_2x4() {
  Mat x(2, 4);
  const double v[] = {2, -2, 2, -2, 1, 1, -1, -1};
  for (int i = 0; i < 8; ++i) x.a[i] = v[i];
  return x;
}

Mat random_feats(std::size_t d, std::size_t n, Rng& rng) {
  Mat x(d, n);
  for (double& v : x.a) v = rng.normal();
  return x;
}

}  // namespace

TEST_CASE("covariance centers rows and scales by 1/N") {
  Mat x(2, 2);
  x(0, 0) = 1;
  x(0, 1) = -1;
  const Mat p = covariance(x);
  REQUIRE(p(0, 0) == Approx(1.0));
  REQUIRE(p(0, 1) == 0.0);
  REQUIRE(p(1, 1) == 0.0);
  REQUIRE(asymmetry(p) == 0.0);
  REQUIRE_THROWS_AS(covariance(Mat(0, 0)), std::invalid_argument);
}

TEST_CASE("covariance is blind to a constant row offset") {
  Rng rng(31);
  const Mat x = random_feats(3, 8, rng);
  Mat shifted = x;
  for (std::size_t j = 0; j < 8; ++j) shifted(1, j) += 100.0;
  REQUIRE(max_abs(sub(covariance(x), covariance(shifted))) < 1e-10);
}

TEST_CASE("pooled_input adds the ridge on the diagonal") {
  Rng rng(37);
  const Mat x = random_feats(3, 6, rng);
  GcpConfig cfg;
  cfg.ridge = 0.5;
  const Mat p = covariance(x);
  const Mat pr = pooled_input(x, cfg);
  for (std::size_t i = 0; i < 3; ++i)
    REQUIRE(pr(i, i) == Approx(p(i, i) + 0.5).margin(1e-14));
  REQUIRE(pr(0, 1) == p(0, 1));
}

TEST_CASE("seb_factor frozen value and domain") {
  REQUIRE(seb_factor(std::vector<double>{1.0}) ==
          Approx(0.36787944117144233).margin(1e-16));
  // One positive eigenvalue keeps it inside (0, ||Q||_F).
  const std::vector<double> lam{2.0, 0.5, 0.0};
  const double f = seb_factor(lam);
  double qn = 0.0;
  for (double l : lam) qn += l;  // ||Q||_F^2 = sum lambda
  REQUIRE(f > 0.0);
  REQUIRE(f < std::sqrt(qn));
  REQUIRE_THROWS_AS(seb_factor(std::vector<double>{1.0, -0.1}),
                    std::domain_error);
}

TEST_CASE("seb_factor_backward frozen 1x1 oracle") {
  Mat q(1, 1), s(1, 1);
  q(0, 0) = 1.0;
  s(0, 0) = std::exp(-1.0);
  const double f = std::exp(-1.0);
  const auto [dq, ds] = seb_factor_backward(q, s, f);
  REQUIRE(dq(0, 0) == Approx(std::exp(-1.0)).margin(1e-15));
  REQUIRE(ds(0, 0) == Approx(1.0).margin(1e-15));
  REQUIRE_THROWS_AS(seb_factor_backward(q, s, 0.0), std::runtime_error);
}

TEST_CASE("closed-form factor equals the explicit product norm") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat x = random_feats(4, 9, rng);
    GcpConfig cfg;
    cfg.use_seb = true;
    const GcpState st = gcp_forward(x, cfg);
    const double explicit_norm = fro_norm(matmul(st.q, transpose(*st.s)));
    REQUIRE(*st.factor ==
            Approx(explicit_norm).epsilon(1e-10).margin(1e-12));
  }
}

TEST_CASE("gcp_forward frozen diagonal example") {
  GcpConfig cfg;
  const GcpState st = gcp_forward(signal_2x4(), cfg);
  REQUIRE(st.a(0, 0) == Approx(2.0).margin(1e-12));
  REQUIRE(st.a(1, 1) == Approx(1.0).margin(1e-12));
  REQUIRE(st.a(0, 1) == Approx(0.0).margin(1e-12));
  REQUIRE(st.eig.lambda[0] == Approx(4.0).margin(1e-12));
  REQUIRE(st.eig.lambda[1] == Approx(1.0).margin(1e-12));
}

TEST_CASE("gcp_forward with SEB rescales the diagonal example") {
  GcpConfig cfg;
  cfg.use_seb = true;
  const GcpState st = gcp_forward(signal_2x4(), cfg);
  const double f = std::sqrt(4.0 * std::exp(-8.0) + std::exp(-2.0));
  REQUIRE(*st.factor == Approx(f).margin(1e-12));
  REQUIRE(st.a(0, 0) == Approx(2.0 * (f + 1.0)).margin(1e-12));
  REQUIRE(st.a(1, 1) == Approx(1.0 * (f + 1.0)).margin(1e-12));
}

TEST_CASE("SEB amplifies eigenvalues, keeps order and conditioning") {
  Rng rng(43);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat x = random_feats(4, 10, rng);
    GcpConfig plain, seb;
    seb.use_seb = true;
    const GcpState sp = gcp_forward(x, plain);
    const GcpState ss = gcp_forward(x, seb);
    const SymEig eq = sym_eig(sp.a);
    const SymEig ea = sym_eig(ss.a);
    for (std::size_t i = 0; i < 4; ++i) {
      REQUIRE(ea.lambda[i] > eq.lambda[i]);  // amplification
      if (i + 1 < 4) REQUIRE(ea.lambda[i] >= ea.lambda[i + 1]);
    }
    const double kq = condition_number(eq).value;
    const double ka = condition_number(ea).value;
    REQUIRE(ka == Approx(kq).epsilon(1e-10));
  }
}

TEST_CASE("truncating config matches truncate_eig bit for bit") {
  Rng rng(47);
  const Mat x = random_feats(4, 9, rng);
  GcpConfig cfg;
  cfg.truncate_k = 2;
  const GcpState st = gcp_forward(x, cfg);
  REQUIRE(st.p_used.has_value());
  const Mat direct = truncate_eig(st.eig, 2);
  REQUIRE(max_abs(sub(*st.p_used, direct)) == 0.0);
  REQUIRE(st.lambda_used[2] == 0.0);
  REQUIRE(st.lambda_used[3] == 0.0);
  REQUIRE(st.lambda_used[0] == st.eig.lambda[0]);
}

TEST_CASE("gcp_backward maps zero gradient to zero") {
  Rng rng(53);
  const Mat x = random_feats(3, 7, rng);
  GcpConfig cfg;
  cfg.use_seb = true;
  const GcpState st = gcp_forward(x, cfg);
  const Mat dx = gcp_backward(st, Mat(3, 3));
  REQUIRE(max_abs(dx) == 0.0);
}

TEST_CASE("eig mask routes or blocks the whole gradient") {
  Rng rng(59);
  const Mat x = random_feats(3, 7, rng);
  GcpConfig cfg;
  const GcpState st = gcp_forward(x, cfg);
  Mat d_a(3, 3);
  for (double& v : d_a.a) v = rng.normal();
  d_a = symmetrized(d_a);

  const std::vector<bool> none(3, false), all(3, true);
  REQUIRE(max_abs(gcp_backward(st, d_a, &none)) == 0.0);
  const Mat masked = gcp_backward(st, d_a, &all);
  const Mat open = gcp_backward(st, d_a);
  REQUIRE(max_abs(sub(masked, open)) == 0.0);
  const std::vector<bool> bad(2, true);
  REQUIRE_THROWS_AS(gcp_backward(st, d_a, &bad), std::invalid_argument);
}

TEST_CASE("config validation rejects bad settings") {
  GcpConfig cfg;
  cfg.normalization = SpectralFn::exp_inv();
  REQUIRE_THROWS_AS(validate_config(cfg), std::invalid_argument);
  cfg = GcpConfig{};
  cfg.k_epsilon = 0.0;
  REQUIRE_THROWS_AS(validate_config(cfg), std::invalid_argument);
  cfg = GcpConfig{};
  cfg.ridge = -1.0;
  REQUIRE_THROWS_AS(validate_config(cfg), std::invalid_argument);
}
