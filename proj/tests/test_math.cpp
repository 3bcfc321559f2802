#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "support/fd.hpp"
#include "vfl/adam.hpp"
#include "vfl/gaussian.hpp"
#include "vfl/rng.hpp"
#include "vfl/vec.hpp"

using namespace vfl;
using testsupport::central_diff;
using testsupport::rel_err;

TEST_CASE("gaussian_logpdf matches frozen values") {
  CHECK(gaussian_logpdf(Vec{1.0}, Vec{1.0}, 1.0) == doctest::Approx(-0.91893853320467274).epsilon(1e-12));
  CHECK(gaussian_logpdf(Vec{0.0}, Vec{0.0}, 0.5) == doctest::Approx(-0.22579135264472743).epsilon(1e-12));
  // Independent high-precision evaluation of the formula.
  CHECK(gaussian_logpdf(Vec{1.3}, Vec{0.7}, 2.0) == doctest::Approx(-1.6570857137646180512).epsilon(1e-14));
}

TEST_CASE("gaussian_logpdf rejects bad input") {
  CHECK_THROWS_AS(gaussian_logpdf(Vec{0.0}, Vec{0.0}, 0.0), DomainError);
  CHECK_THROWS_AS(gaussian_logpdf(Vec{0.0}, Vec{0.0}, -1.0), DomainError);
  CHECK_THROWS_AS(gaussian_logpdf(Vec{0.0, 1.0}, Vec{0.0}, 1.0), ShapeError);
  CHECK_THROWS_AS(gaussian_logpdf_grads(Vec{0.0}, Vec{0.0}, Vec{0.0, 1.0}), ShapeError);
}

TEST_CASE("gaussian_logpdf translation invariance") {
  RngStream rng(7, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x = rng.standard_normal_vec(4);
    const Vec m = rng.standard_normal_vec(4);
    Vec s(4);
    for (double& v : s) v = 0.3 + rng.uniform();
    const double shift = 3.0 * rng.standard_normal();
    Vec xs = x, ms = m;
    for (std::size_t i = 0; i < 4; ++i) {
      xs[i] += shift;
      ms[i] += shift;
    }
    CHECK(gaussian_logpdf(x, m, s) == doctest::Approx(gaussian_logpdf(xs, ms, s)).epsilon(1e-12));
  }
}

TEST_CASE("gaussian gradients: stationarity and symmetry") {
  const Vec x{0.4, -1.2};
  const GaussianGrads g0 = gaussian_logpdf_grads(x, x, Vec{1.0, 2.0});
  CHECK(norm_inf(g0.dmean) == 0.0);
  RngStream rng(11, 2);
  for (int t = 0; t < 10; ++t) {
    const Vec a = rng.standard_normal_vec(3);
    const Vec m = rng.standard_normal_vec(3);
    Vec s(3);
    for (double& v : s) v = 0.2 + rng.uniform();
    const GaussianGrads g = gaussian_logpdf_grads(a, m, s);
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.dx[i] + g.dmean[i] == doctest::Approx(0.0));
  }
}

TEST_CASE("gaussian gradients match central finite differences") {
  RngStream rng(23, 3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 4;
    const Vec x = rng.standard_normal_vec(d);
    const Vec m = rng.standard_normal_vec(d);
    Vec s(d);
    for (double& v : s) v = 0.3 + 2.0 * rng.uniform();

    const GaussianGrads g = gaussian_logpdf_grads(x, m, s);
    const Vec fx = central_diff([&](const Vec& v) { return gaussian_logpdf(v, m, s); }, x);
    const Vec fm = central_diff([&](const Vec& v) { return gaussian_logpdf(x, v, s); }, m);
    const Vec fs = central_diff([&](const Vec& v) { return gaussian_logpdf(x, m, v); }, s);
    CHECK(rel_err(g.dx, fx) < 1e-6);
    CHECK(rel_err(g.dmean, fm) < 1e-6);
    CHECK(rel_err(g.dscale, fs) < 1e-6);
  }
}

TEST_CASE("scalar-scale gradient accumulates over components") {
  const Vec x{0.3, -0.9, 2.0};
  const Vec m{0.0, 0.0, 1.0};
  const GaussianGrads g = gaussian_logpdf_grads(x, m, 0.7);
  const Vec fs = central_diff([&](const Vec& v) { return gaussian_logpdf(x, m, v[0]); }, Vec{0.7});
  CHECK(rel_err(Vec{g.dscale_scalar}, fs) < 1e-6);
}

TEST_CASE("half-normal logpdf at 1 matches the direct evaluation") {
  CHECK(half_normal_logpdf(1.0, 1.0) == doctest::Approx(-0.72579135264472743).epsilon(1e-13));
  CHECK_THROWS_AS(half_normal_logpdf(-1.0, 1.0), DomainError);
}

TEST_CASE("adam: zero gradient at fresh state gives zero update") {
  AdamState adam(3, AdamConfig{});
  const Vec u = adam.step(Vec{0.0, 0.0, 0.0});
  CHECK(norm_inf(u) == 0.0);
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: first-step magnitude is the learning rate") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 1e-12;
  AdamState adam(1, cfg);
  const Vec u = adam.step(Vec{1.0});
  CHECK(u[0] == doctest::Approx(0.1).epsilon(1e-6));
}

TEST_CASE("adam: default learning rate is 1e-3") {
  CHECK(AdamConfig{}.lr == doctest::Approx(1e-3));
}

TEST_CASE("adam: NaN gradient is rejected with a diagnostic") {
  AdamState adam(2, AdamConfig{});
  CHECK_THROWS_AS(adam.step(Vec{0.0, std::nan("")}), NumericError);
}

TEST_CASE("adam: constant gradient keeps the update sign") {
  for (double g : {1.0, -0.25}) {
    AdamState adam(1, AdamConfig{});
    for (int t = 0; t < 100; ++t) {
      const Vec u = adam.step(Vec{g});
      CHECK(u[0] * g > 0.0);
    }
  }
}

TEST_CASE("rng: identical (seed, stream, counter) replays identically") {
  RngStream a(42, 9);
  RngStream b(42, 9);
  const Vec va = a.standard_normal_vec(64);
  const Vec vb = b.standard_normal_vec(64);
  for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);
  CHECK(a.counter() == 64);
}

TEST_CASE("rng: any prefix is reproducible from (seed, stream)") {
  RngStream a(5, 77);
  Vec first;
  for (int i = 0; i < 50; ++i) first.push_back(a.standard_normal());
  a.standard_normal_vec(100);  // advance further
  RngStream b(5, 77, 10);      // resume mid-stream
  CHECK(b.standard_normal() == first[10]);
  RngStream c(5, 77);
  for (int i = 0; i < 50; ++i) CHECK(c.standard_normal() == first[i]);
}

TEST_CASE("rng: moments of a large sample" * doctest::timeout(60)) {
  RngStream a(2024, 1);
  const std::size_t n = 1000000;
  double mean = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = a.standard_normal();
    mean += v;
    sq += v * v;
  }
  mean /= n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("rng: distinct stream ids are uncorrelated") {
  RngStream a(99, 1);
  RngStream b(99, 2);
  const std::size_t n = 100000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a.standard_normal();
    const double y = b.standard_normal();
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa / n * sa / n) * (sbb / n - sb / n * sb / n));
  CHECK(std::fabs(corr) < 0.01);
}

TEST_CASE("rng: substreams differ and normal quantile is sane") {
  RngStream a(1, 1);
  RngStream s1 = a.substream(1);
  RngStream s2 = a.substream(2);
  CHECK(s1.stream_id() != s2.stream_id());
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
}

TEST_CASE("cholesky round trip and solves") {
  Mat a(3, 3);
  // SPD matrix built as B B^T + I.
  Mat b(3, 3);
  RngStream rng(3, 3);
  for (double& v : b.data) v = rng.standard_normal();
  Mat bt = transpose(b);
  a = matmul(b, bt);
  for (int i = 0; i < 3; ++i) a(i, i) += 1.0;

  const Mat l = cholesky(a);
  const Vec rhs{1.0, -2.0, 0.5};
  const Vec x = chol_solve(l, rhs);
  const Vec back = matvec(a, x);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(rhs[i]).epsilon(1e-10));

  const Mat inv = chol_inverse(l);
  const Mat prod = matmul(a, inv);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(prod(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));

  CHECK_THROWS_AS(cholesky(Mat(2, 3)), ShapeError);
}

TEST_CASE("softplus inverse round trip") {
  for (double y : {1e-4, 0.1, 1.0, 7.0, 40.0}) {
    CHECK(softplus(softplus_inv(y)) == doctest::Approx(y).epsilon(1e-10));
  }
  CHECK_THROWS_AS(softplus_inv(0.0), DomainError);
}

TEST_CASE("vertical ops check dimensions") {
  CHECK_THROWS_AS(add(Vec{1.0}, Vec{1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(dot(Vec{1.0}, Vec{}), ShapeError);
  CHECK_THROWS_AS(matvec(Mat(2, 2), Vec{1.0}), ShapeError);
}
