#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "support/fd.hpp"
#include "vfl/gaussian.hpp"
#include "vfl/soul.hpp"

using namespace vfl;
using testsupport::central_diff;
using testsupport::rel_err;

namespace {

Mat random_mat(std::size_t r, std::size_t c, RngStream& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data) v = scale * rng.standard_normal();
  return m;
}

struct LinearToy {
  Dataset data;
  ModelSpec spec;
  double sigma = 1.0;
};

// Small well-conditioned linear-Gaussian toy used across the SOUL tests.
LinearToy make_toy(std::uint64_t seed, std::size_t n = 20, int p = 2, int num_clients = 2,
                   double rho = 1.0, double x_scale = 0.3) {
  RngStream rng(seed, 6001);
  LinearToy toy;
  Vec eta(n, 0.0);
  for (int j = 0; j < num_clients; ++j) {
    Mat x = random_mat(n, static_cast<std::size_t>(p), rng, x_scale);
    add_in_place(eta, matvec(x, rng.standard_normal_vec(static_cast<std::size_t>(p))));
    toy.data.blocks.push_back(std::move(x));
  }
  toy.data.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) toy.data.y[i] = eta[i] + rng.standard_normal();
  toy.spec.family = Family::LinearGaussian;
  toy.spec.formulation = Formulation::Augmented;
  toy.spec.rho = rho;
  toy.spec.sigma.value = toy.sigma;
  return toy;
}

// Closed-form maximizer of log p(y|z) + sum_j log N(z_j; 0, x_j x_j^T + rho^2 I):
// z_j = C_j (y - s) / sigma^2 with (I + B/sigma^2) s = (B/sigma^2) y, B = sum C_j.
std::vector<Vec> toy_map_oracle(const LinearToy& toy) {
  const std::size_t n = toy.data.n();
  const int num_clients = toy.data.num_clients();
  const double s2 = toy.sigma * toy.sigma;
  const double rho2 = toy.spec.rho * toy.spec.rho;

  std::vector<Mat> c_blocks;
  Mat b(n, n, 0.0);
  for (int j = 0; j < num_clients; ++j) {
    const Mat& x = toy.data.blocks[static_cast<std::size_t>(j)];
    Mat c(n, n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t bb = 0; bb < n; ++bb) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.cols; ++k) s += x(a, k) * x(bb, k);
        c(a, bb) = s;
      }
    for (std::size_t a = 0; a < n; ++a) c(a, a) += rho2;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t bb = 0; bb < n; ++bb) b(a, bb) += c(a, bb);
    c_blocks.push_back(std::move(c));
  }
  Mat lhs = b;
  for (double& v : lhs.data) v /= s2;
  for (std::size_t a = 0; a < n; ++a) lhs(a, a) += 1.0;
  const Vec rhs = scale(matvec(b, toy.data.y), 1.0 / s2);
  const Vec s = chol_solve(cholesky(lhs), rhs);

  Vec resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = (toy.data.y[i] - s[i]) / s2;
  std::vector<Vec> z_star;
  for (int j = 0; j < num_clients; ++j) z_star.push_back(matvec(c_blocks[j], resid));
  return z_star;
}

// Exact z-gradient of the toy objective at a given z (Fisher identity applied
// in closed form): deta + (-(z_j - x_j m_hat_j) / rho^2) with m_hat_j the
// exact conditional mean of theta_j | z_j.
double toy_exact_grad_norm(const LinearToy& toy, const std::vector<Vec>& z) {
  const std::size_t n = toy.data.n();
  const double rho2 = toy.spec.rho * toy.spec.rho;
  Vec eta(n, 0.0);
  for (const Vec& zj : z) add_in_place(eta, zj);
  const Vec deta = dlog_lik_deta(Family::LinearGaussian, toy.data.y, eta, toy.sigma);
  double worst = 0.0;
  for (int j = 0; j < toy.data.num_clients(); ++j) {
    const Mat& x = toy.data.blocks[static_cast<std::size_t>(j)];
    Mat prec(x.cols, x.cols, 0.0);
    for (std::size_t a = 0; a < x.cols; ++a) prec(a, a) = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < x.cols; ++a)
        for (std::size_t bb = 0; bb < x.cols; ++bb) prec(a, bb) += x(i, a) * x(i, bb) / rho2;
    const Vec m_hat =
        chol_solve(cholesky(prec), scale(matvec_t(x, z[static_cast<std::size_t>(j)]), 1.0 / rho2));
    const Vec pred = matvec(x, m_hat);
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max(worst,
                       std::fabs(deta[i] - (z[static_cast<std::size_t>(j)][i] - pred[i]) / rho2));
  }
  return worst;
}

SoulConfig toy_config(std::uint64_t seed) {
  SoulConfig cfg;
  cfg.seed = seed;
  cfg.outer_iterations = 5000;
  cfg.inner_samples = 800;
  cfg.ula_step = 0.3;
  cfg.rm_delta0 = 0.02;
  cfg.rm_hold = 2500;
  cfg.rm_tau = 80.0;
  cfg.average_start_frac = 0.7;
  return cfg;
}

}  // namespace

TEST_CASE("ula_step trivial cases") {
  const Vec theta{0.3, -0.7};
  const Vec zero(2, 0.0);
  const Vec moved = ula_step(theta, Vec{10.0, -5.0}, 0.0, zero);
  CHECK(moved == theta);
  const Vec still = ula_step(theta, zero, 0.01, zero);
  CHECK(still == theta);
  CHECK_THROWS_AS(ula_step(theta, zero, -1.0, zero), DomainError);
}

TEST_CASE("ula chain variance matches the discretization-corrected value") {
  // Target N(0,1): theta' = (1-h) theta + sqrt(2h) xi has stationary variance
  // 1 / (1 - h/2).
  const double h = 0.01;
  RngStream rng(7, 1);
  double theta = 0.0;
  double sq = 0.0;
  const int steps = 100000;
  const int burn = 2000;
  for (int t = 0; t < steps + burn; ++t) {
    theta = ula_step({theta}, {-theta}, h, {rng.standard_normal()})[0];
    if (t >= burn) sq += theta * theta;
  }
  const double var = sq / steps;
  CHECK(std::fabs(var - 1.0 / (1.0 - h / 2.0)) < 0.10);
}

TEST_CASE("z prior gradient with the exact conditional mean equals the marginal gradient") {
  const LinearToy toy = make_toy(11);
  RngStream rng(13, 2);
  for (int j = 0; j < 2; ++j) {
    const Mat& x = toy.data.blocks[static_cast<std::size_t>(j)];
    const Vec z = rng.standard_normal_vec(toy.data.n());
    const double rho2 = toy.spec.rho * toy.spec.rho;

    // Exact conditional mean of theta | z.
    Mat prec(x.cols, x.cols, 0.0);
    for (std::size_t a = 0; a < x.cols; ++a) prec(a, a) = 1.0;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t a = 0; a < x.cols; ++a)
        for (std::size_t b = 0; b < x.cols; ++b) prec(a, b) += x(i, a) * x(i, b) / rho2;
    const Vec m_hat = chol_solve(cholesky(prec), scale(matvec_t(x, z), 1.0 / rho2));

    ClientModel model(Family::LinearGaussian, x, PriorSpec{});
    const Vec est = soul_z_prior_grad(model, {m_hat}, z, toy.spec.rho);

    // Marginal gradient: -C^{-1} z with C = x x^T + rho^2 I.
    Mat c(x.rows, x.rows, 0.0);
    for (std::size_t a = 0; a < x.rows; ++a)
      for (std::size_t b = 0; b < x.rows; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < x.cols; ++k) s += x(a, k) * x(b, k);
        c(a, b) = s;
      }
    for (std::size_t a = 0; a < x.rows; ++a) c(a, a) += rho2;
    const Vec exact = scale(chol_solve(cholesky(c), z), -1.0);
    CHECK(rel_err(est, exact) < 1e-9);
  }
}

TEST_CASE("expected z gradient vanishes at the closed-form optimum") {
  const LinearToy toy = make_toy(17);
  const std::vector<Vec> z_star = toy_map_oracle(toy);
  CHECK(toy_exact_grad_norm(toy, z_star) < 1e-9);
}

TEST_CASE("rho -> infinity removes the conditional-prior influence") {
  const LinearToy toy = make_toy(19);
  ClientModel model(Family::LinearGaussian, toy.data.blocks[0], PriorSpec{});
  RngStream rng(23, 3);
  const Vec z = rng.standard_normal_vec(toy.data.n());
  const Vec theta = rng.standard_normal_vec(2);
  const Vec small = soul_z_prior_grad(model, {theta}, z, 1e6);
  CHECK(norm_inf(small) < 1e-9);
  CHECK_THROWS_AS(soul_z_prior_grad(model, {}, z, 1.0), DomainError);
}

TEST_CASE("power aggregation identity: client pieces reassemble the full z gradient") {
  RngStream rng(29, 4);
  const std::size_t n = 8;
  const int num_clients = 3;
  LinearToy toy = make_toy(31, n, 2, num_clients, 0.7, 1.0);
  toy.spec.formulation = Formulation::Power;
  GammaValue gamma;
  gamma.sigma = toy.sigma;

  std::vector<ClientModel> models = make_client_models(toy.spec, toy.data, 1);
  std::vector<Vec> theta(num_clients), z(num_clients);
  for (int j = 0; j < num_clients; ++j) {
    theta[j] = rng.standard_normal_vec(2);
    z[j] = rng.standard_normal_vec(n);
  }

  for (int j = 0; j < num_clients; ++j) {
    // Server-side assembly from the per-client pieces (M = 1 draw).
    Vec assembled = soul_z_prior_grad(models[j], {theta[j]}, z[j], toy.spec.rho);
    for (int k = 0; k < num_clients; ++k) {
      if (k == j) continue;
      Vec others(n, 0.0);
      for (int m = 0; m < num_clients; ++m)
        if (m != k) add_in_place(others, z[m]);
      add_in_place(assembled,
                   soul_z_cross_grad_power(models[k], Family::LinearGaussian, {theta[k]},
                                           toy.data.y, {}, others, gamma, num_clients));
    }

    // Monolithic finite difference of the full power log density over z_j.
    auto log_density = [&](const Vec& zj) {
      std::vector<Vec> zz = z;
      zz[static_cast<std::size_t>(j)] = zj;
      double total = 0.0;
      for (int k = 0; k < num_clients; ++k) {
        Vec others(n, 0.0);
        for (int m = 0; m < num_clients; ++m)
          if (m != k) add_in_place(others, zz[m]);
        const Vec pred = models[k].predictor(theta[k]).pred;
        total += loglik_power_j(Family::LinearGaussian, toy.data.y, {}, pred, others, gamma,
                                num_clients)
                     .value;
      }
      const Vec pred_j = models[j].predictor(theta[j]).pred;
      total += log_aux_conditional(zz[static_cast<std::size_t>(j)], pred_j, toy.spec.rho).value;
      return total;
    };
    const Vec fd = central_diff(log_density, z[j]);
    CHECK(rel_err(assembled, fd) < 1e-6);
  }
}

TEST_CASE("shared-sigma gradient matches finite differences") {
  RngStream rng(37, 5);
  LinearToy toy = make_toy(41, 10, 2, 2, 0.5, 1.0);
  std::vector<ClientModel> models = make_client_models(toy.spec, toy.data, 1);
  const Vec theta = rng.standard_normal_vec(2);
  const Vec others = rng.standard_normal_vec(10);
  GammaValue gamma;
  gamma.sigma = 0.9;

  const double grad =
      soul_sigma_grad_power(models[0], {theta}, toy.data.y, {}, others, gamma, 2);
  const Vec fd = central_diff(
      [&](const Vec& s) {
        GammaValue g = gamma;
        g.sigma = s[0];
        const Vec pred = models[0].predictor(theta).pred;
        return loglik_power_j(Family::LinearGaussian, toy.data.y, {}, pred, others, g, 2).value;
      },
      Vec{gamma.sigma});
  CHECK(rel_err(Vec{grad}, fd) < 1e-6);

  // At the residual-optimal sigma the likelihood gradient vanishes.
  const Vec pred = models[0].predictor(theta).pred;
  Vec eta = add(pred, others);
  double ss = 0.0;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    const double r = toy.data.y[i] - eta[i];
    ss += r * r;
  }
  GammaValue opt;
  opt.sigma = std::sqrt(ss / static_cast<double>(eta.size()));
  CHECK(std::fabs(soul_sigma_grad_power(models[0], {theta}, toy.data.y, {}, others, opt, 2)) <
        1e-9);
}

TEST_CASE("J=1 power z-gradient carries no cross terms") {
  LinearToy toy = make_toy(43, 10, 2, 1, 0.5, 1.0);
  toy.spec.formulation = Formulation::Power;
  std::vector<ClientModel> models = make_client_models(toy.spec, toy.data, 1);
  RngStream rng(47, 6);
  const Vec theta = rng.standard_normal_vec(2);
  const Vec z = rng.standard_normal_vec(10);
  // The only z_j term left is the conditional-prior piece.
  const Vec prior = soul_z_prior_grad(models[0], {theta}, z, toy.spec.rho);
  const Vec pred = models[0].predictor(theta).pred;
  const AuxConditional cond = log_aux_conditional(z, pred, toy.spec.rho);
  CHECK(rel_err(prior, cond.dz) < 1e-12);
}

TEST_CASE("run_soul converges to the closed-form MAP on the linear toy" * doctest::timeout(300)) {
  const LinearToy toy = make_toy(53);
  const std::vector<Vec> z_star = toy_map_oracle(toy);
  const SoulConfig cfg = toy_config(101);
  const SoulResult res = run_soul(toy.spec, toy.data, cfg);
  REQUIRE(!res.aborted);
  double sup = 0.0;
  for (int j = 0; j < 2; ++j)
    for (std::size_t i = 0; i < toy.data.n(); ++i)
      sup = std::max(sup, std::fabs(res.z_hat[j][i] - z_star[j][i]));
  CHECK(sup < 1e-2);
  // Oracle gradient at the returned estimate sits below the stated threshold.
  CHECK(toy_exact_grad_norm(toy, res.z_hat) < 1e-3);
  // SOUL exchanges 2J messages per outer iteration here plus the final summaries.
  CHECK(res.messages ==
        static_cast<std::uint64_t>(2 * 2 * cfg.outer_iterations + 2));
}

TEST_CASE("frozen Robbins-Monro leaves z untouched while chains keep moving") {
  const LinearToy toy = make_toy(59);
  SoulConfig cfg = toy_config(7);
  cfg.outer_iterations = 50;
  cfg.inner_samples = 5;
  cfg.rm_delta0 = 0.0;
  cfg.average_start_frac = 1.0;
  const SoulResult res = run_soul(toy.spec, toy.data, cfg);
  REQUIRE(!res.aborted);
  for (int j = 0; j < 2; ++j) {
    ClientModel model(Family::LinearGaussian, toy.data.blocks[static_cast<std::size_t>(j)],
                      PriorSpec{});
    const Vec warm = model.predictor(model.theta_init()).pred;
    CHECK(rel_err(res.z_final[static_cast<std::size_t>(j)], warm, 1e-6) < 1e-12);
    CHECK(norm2(res.theta_chain[static_cast<std::size_t>(j)]) > 0.0);
  }
}

TEST_CASE("frozen-z chains are unaffected by other clients") {
  LinearToy a = make_toy(61);
  LinearToy b = a;
  // Change client 1's data; client 0's conditional chain must not notice while
  // z stays frozen.
  RngStream rng(67, 7);
  for (double& v : b.data.blocks[1].data) v += 0.5 * rng.standard_normal();
  SoulConfig cfg = toy_config(9);
  cfg.outer_iterations = 30;
  cfg.inner_samples = 10;
  cfg.rm_delta0 = 0.0;
  const SoulResult ra = run_soul(a.spec, a.data, cfg);
  const SoulResult rb = run_soul(b.spec, b.data, cfg);
  REQUIRE(ra.theta_chain[0].size() == rb.theta_chain[0].size());
  for (std::size_t i = 0; i < ra.theta_chain[0].size(); ++i)
    CHECK(ra.theta_chain[0][i] == rb.theta_chain[0][i]);
}

TEST_CASE("divergence detector aborts with a diagnostic") {
  const LinearToy toy = make_toy(71);
  SoulConfig cfg = toy_config(3);
  cfg.outer_iterations = 400;
  cfg.inner_samples = 2;
  cfg.rm_delta0 = 1e5;  // far beyond the stable region
  cfg.rm_hold = 400;
  cfg.z_norm_bound = 1e4;
  const SoulResult res = run_soul(toy.spec, toy.data, cfg);
  CHECK(res.aborted);
  CHECK(!res.abort_reason.empty());
}

TEST_CASE("shared-sigma update recovers the ground truth (shortened run)" *
          doctest::timeout(300)) {
  LinearToy toy = make_toy(73, 200, 3, 2, 0.1, 1.0);
  SoulConfig cfg;
  cfg.seed = 5;
  cfg.outer_iterations = 1200;
  cfg.inner_samples = 50;
  cfg.ula_step = 1.5e-5;
  cfg.rm_delta0 = 0.01;
  cfg.rm_hold = 400;
  cfg.rm_tau = 100.0;
  cfg.learn_sigma = true;
  cfg.sigma_init = 2.0;
  cfg.sigma_lr = 0.02;
  toy.spec.sigma.learn = true;
  const SoulResult res = run_soul(toy.spec, toy.data, cfg);
  REQUIRE(!res.aborted);
  CHECK(std::fabs(res.sigma_final - 1.0) < 0.15);
}

TEST_CASE("power-formulation soul runs end to end") {
  LinearToy toy = make_toy(79, 12, 2, 2, 0.5, 0.5);
  toy.spec.formulation = Formulation::Power;
  SoulConfig cfg;
  cfg.seed = 2;
  cfg.outer_iterations = 200;
  cfg.inner_samples = 20;
  cfg.ula_step = 0.02;
  cfg.rm_delta0 = 0.05;
  cfg.rm_tau = 50.0;
  const SoulResult res = run_soul(toy.spec, toy.data, cfg);
  REQUIRE(!res.aborted);
  for (const Vec& z : res.z_hat) check_finite(z, "z_hat");
  // Two communication rounds per outer iteration: J broadcasts, J cross-grad
  // uploads, plus the final summaries.
  CHECK(res.messages == static_cast<std::uint64_t>(2 * 2 * cfg.outer_iterations + 2));
}
