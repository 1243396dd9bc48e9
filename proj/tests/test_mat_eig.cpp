#include <catch_amalgamated.hpp>

#include <cmath>

#include "covpool/covpool.hpp"

using namespace covpool;
using Catch::Approx;

namespace {

Mat from_rows(std::size_t r, std::size_t c, std::initializer_list<double> v) {
  Mat m(r, c);
  std::size_t i = 0;
  for (double x : v) m.a[i++] = x;
  return m;
}

Mat random_spsd(std::size_t d, Rng& rng, double scale = 1.0) {
  Mat b(d, d + 2);
  for (double& v : b.a) v = scale * rng.normal();
  return matmul(b, transpose(b));
}

}  // namespace

TEST_CASE("fro_inner pairs entries") {
  const Mat a = from_rows(2, 2, {1, 2, 3, 4});
  REQUIRE(fro_inner(a, Mat::identity(2)) == Approx(5.0));
  REQUIRE(fro_inner(a, a) == Approx(30.0));
  REQUIRE(fro_norm(a) == Approx(std::sqrt(30.0)));
}

TEST_CASE("matmul and transpose agree with hand products") {
  const Mat a = from_rows(2, 3, {1, 2, 3, 4, 5, 6});
  const Mat at = transpose(a);
  REQUIRE(at.rows == 3);
  REQUIRE(at(0, 1) == 4.0);
  const Mat g = matmul(a, at);  // gram
  REQUIRE(g(0, 0) == Approx(14.0));
  REQUIRE(g(0, 1) == Approx(32.0));
  REQUIRE(g(1, 1) == Approx(77.0));
  REQUIRE(asymmetry(g) == 0.0);
}

TEST_CASE("symmetrized halves the skew part") {
  const Mat a = from_rows(2, 2, {0, 2, 0, 0});
  const Mat s = symmetrized(a);
  REQUIRE(s(0, 1) == Approx(1.0));
  REQUIRE(s(1, 0) == Approx(1.0));
  REQUIRE(trace(from_rows(2, 2, {3, 9, 9, 4})) == Approx(7.0));
}

TEST_CASE("sym_eig solves the 2x2 analytically") {
  const Mat p = from_rows(2, 2, {2, 1, 1, 2});
  const SymEig e = sym_eig(p);
  const double r = 1.0 / std::sqrt(2.0);
  REQUIRE(e.lambda[0] == Approx(3.0).margin(1e-12));
  REQUIRE(e.lambda[1] == Approx(1.0).margin(1e-12));
  // Sign convention: largest-magnitude component positive, ties to low row.
  REQUIRE(e.u(0, 0) == Approx(r).margin(1e-12));
  REQUIRE(e.u(1, 0) == Approx(r).margin(1e-12));
  REQUIRE(e.u(0, 1) == Approx(r).margin(1e-12));
  REQUIRE(e.u(1, 1) == Approx(-r).margin(1e-12));
}

TEST_CASE("sym_eig returns an ordered orthonormal factorization") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Mat p = random_spsd(6, rng);
    const SymEig e = sym_eig(p);
    for (std::size_t i = 0; i + 1 < e.lambda.size(); ++i)
      REQUIRE(e.lambda[i] >= e.lambda[i + 1]);
    const Mat utu = matmul(transpose(e.u), e.u);
    REQUIRE(max_abs(sub(utu, Mat::identity(6))) < 1e-10);
    const Mat back = reconstruct(e.u, e.lambda);
    REQUIRE(max_abs(sub(back, p)) < 1e-9 * std::max(1.0, max_abs(p)));
  }
}

TEST_CASE("sym_eig rejects non-square and asymmetric input") {
  REQUIRE_THROWS_AS(sym_eig(Mat(2, 3)), std::invalid_argument);
  REQUIRE_THROWS_AS(sym_eig(from_rows(2, 2, {1, 2, 0, 1})),
                    std::invalid_argument);
}

TEST_CASE("upper triangle vectorization round trips") {
  Rng rng(3);
  const Mat p = random_spsd(5, rng);
  const std::vector<double> v = upper_tri_vec(p);
  REQUIRE(v.size() == 15);
  const Mat back = upper_tri_unvec(v, 5);
  REQUIRE(max_abs(sub(back, p)) == 0.0);
}

TEST_CASE("upper_tri_vec rejects asymmetric input") {
  REQUIRE_THROWS_AS(upper_tri_vec(from_rows(2, 2, {1, 5, 0, 1})),
                    std::invalid_argument);
}

TEST_CASE("upper_tri_scatter is the vectorization adjoint") {
  // <scatter(g), S> == <g, vec(S)> for every symmetric S.
  Rng rng(5);
  const std::size_t d = 4;
  std::vector<double> g(d * (d + 1) / 2);
  for (double& x : g) x = rng.normal();
  const Mat gs = upper_tri_scatter(g, d);
  const Mat s = random_spsd(d, rng);
  const std::vector<double> vs = upper_tri_vec(s);
  double dot = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * vs[i];
  REQUIRE(fro_inner(gs, s) == Approx(dot).margin(1e-12));
}

TEST_CASE("rng streams are deterministic") {
  Rng a(7), b(7);
  for (int i = 0; i < 5; ++i) REQUIRE(a.next_u64() == b.next_u64());
  Rng c(7), d(7);
  for (int i = 0; i < 5; ++i) REQUIRE(c.normal() == d.normal());
  std::vector<int> v1{1, 2, 3, 4, 5}, v2{1, 2, 3, 4, 5};
  Rng e(9), f(9);
  e.shuffle(v1);
  f.shuffle(v2);
  REQUIRE(v1 == v2);
  Rng g(13);
  for (int i = 0; i < 100; ++i) REQUIRE(g.index(7) < 7);
}
