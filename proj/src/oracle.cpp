#include "vfl/oracle.hpp"

#include <cmath>

#include "vfl/gaussian.hpp"

namespace vfl {

Vec GaussianPosterior::marginal_std() const {
  Vec s(mean.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::sqrt(cov(i, i));
  return s;
}

namespace {

void check_conjugate(const Dataset& data, double sigma, double rho) {
  if (!(sigma > 0.0)) throw DomainError("marginalized_posterior_linear: sigma must be positive");
  if (rho < 0.0) throw DomainError("marginalized_posterior_linear: rho must be >= 0");
  if (!data.offset.empty()) throw DomainError("marginalized_posterior_linear: offsets unsupported");
}

struct Stacked {
  Mat x;
  Vec prior_mean;
  Vec prior_var;
};

Stacked stack(const Dataset& data, const std::vector<PriorSpec>& priors) {
  Stacked s;
  s.x = hcat(data.blocks);
  s.prior_mean.reserve(s.x.cols);
  s.prior_var.reserve(s.x.cols);
  for (int j = 0; j < data.num_clients(); ++j) {
    const PriorSpec pr = priors.empty() ? PriorSpec{} : priors.at(static_cast<std::size_t>(j));
    if (!(pr.sd > 0.0)) throw DomainError("prior sd must be positive");
    for (std::size_t k = 0; k < data.blocks[j].cols; ++k) {
      s.prior_mean.push_back(pr.mean);
      s.prior_var.push_back(pr.sd * pr.sd);
    }
  }
  return s;
}

}  // namespace

GaussianPosterior marginalized_posterior_linear(const Dataset& data,
                                                const std::vector<PriorSpec>& priors, double sigma,
                                                double rho) {
  check_conjugate(data, sigma, rho);
  const Stacked s = stack(data, priors);
  const double j = static_cast<double>(data.num_clients());
  const double noise_var = sigma * sigma + j * rho * rho;

  const std::size_t p = s.x.cols;
  Mat precision(p, p, 0.0);
  for (std::size_t a = 0; a < p; ++a) precision(a, a) = 1.0 / s.prior_var[a];
  // precision += X^T X / noise_var
  for (std::size_t i = 0; i < s.x.rows; ++i) {
    const double* row = s.x.row_ptr(i);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b <= a; ++b) precision(a, b) += row[a] * row[b] / noise_var;
  }
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a + 1; b < p; ++b) precision(a, b) = precision(b, a);

  Vec rhs = matvec_t(s.x, data.y);
  for (std::size_t a = 0; a < p; ++a)
    rhs[a] = rhs[a] / noise_var + s.prior_mean[a] / s.prior_var[a];

  const Mat l = cholesky(precision);
  GaussianPosterior post;
  post.mean = chol_solve(l, rhs);
  post.cov = chol_inverse(l);
  return post;
}

double linear_evidence(const Dataset& data, const std::vector<PriorSpec>& priors, double sigma,
                       double rho) {
  check_conjugate(data, sigma, rho);
  const Stacked s = stack(data, priors);
  const double j = static_cast<double>(data.num_clients());
  const double noise_var = sigma * sigma + j * rho * rho;
  const std::size_t n = s.x.rows;
  const std::size_t p = s.x.cols;

  // Sigma_y = noise_var * I + X V0 X^T; use the determinant lemma and a p x p solve.
  // A := noise_var * V0^-1 + X^T X
  Mat a(p, p, 0.0);
  for (std::size_t c = 0; c < p; ++c) a(c, c) = noise_var / s.prior_var[c];
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = s.x.row_ptr(i);
    for (std::size_t u = 0; u < p; ++u)
      for (std::size_t v = 0; v <= u; ++v) a(u, v) += row[u] * row[v];
  }
  for (std::size_t u = 0; u < p; ++u)
    for (std::size_t v = u + 1; v < p; ++v) a(u, v) = a(v, u);

  const Mat l = cholesky(a);
  double logdet_a = 0.0;
  for (std::size_t u = 0; u < p; ++u) logdet_a += 2.0 * std::log(l(u, u));
  double logdet_v0 = 0.0;
  for (std::size_t c = 0; c < p; ++c) logdet_v0 += std::log(s.prior_var[c]);
  // det(Sigma_y) = noise_var^(n-p) * det(V0) * det(A)
  const double logdet_sigma =
      (static_cast<double>(n) - static_cast<double>(p)) * std::log(noise_var) + logdet_v0 +
      logdet_a;

  Vec r(n);
  const Vec xm = matvec(s.x, s.prior_mean);
  for (std::size_t i = 0; i < n; ++i) r[i] = data.y[i] - xm[i];
  // r^T Sigma^-1 r = (r^T r - r^T X A^-1 X^T r) / noise_var
  const Vec xtr = matvec_t(s.x, r);
  const Vec ainv_xtr = chol_solve(l, xtr);
  const double quad = (dot(r, r) - dot(xtr, ainv_xtr)) / noise_var;

  return -0.5 * (static_cast<double>(n) * kLogTwoPi + logdet_sigma + quad);
}

GridPosterior grid_posterior(const std::function<double(const Vec&)>& log_unnorm, const Vec& lo,
                             const Vec& hi, int points_per_dim) {
  const std::size_t d = lo.size();
  if (d < 1 || d > 2) throw DomainError("grid_posterior: only 1 or 2 free parameters supported");
  check_same_dim(lo, hi, "grid_posterior bounds");
  if (points_per_dim < 9) throw DomainError("grid_posterior: grid too coarse");

  auto integrate = [&](int m, Vec* mean_out, Mat* cov_out) {
    std::vector<double> step(d), weight(d);
    for (std::size_t k = 0; k < d; ++k) step[k] = (hi[k] - lo[k]) / (m - 1);

    // First pass: max of the log-density for stable exponentials.
    double max_log = -1e300;
    Vec point(d);
    const int total = (d == 1) ? m : m * m;
    for (int idx = 0; idx < total; ++idx) {
      const int i0 = (d == 1) ? idx : idx / m;
      const int i1 = (d == 1) ? 0 : idx % m;
      point[0] = lo[0] + step[0] * i0;
      if (d == 2) point[1] = lo[1] + step[1] * i1;
      max_log = std::max(max_log, log_unnorm(point));
    }

    double mass = 0.0;
    Vec mean(d, 0.0);
    Mat second(d, d, 0.0);
    for (int idx = 0; idx < total; ++idx) {
      const int i0 = (d == 1) ? idx : idx / m;
      const int i1 = (d == 1) ? 0 : idx % m;
      point[0] = lo[0] + step[0] * i0;
      if (d == 2) point[1] = lo[1] + step[1] * i1;
      double w = (i0 == 0 || i0 == m - 1) ? 0.5 : 1.0;
      if (d == 2) w *= (i1 == 0 || i1 == m - 1) ? 0.5 : 1.0;
      const double dens = std::exp(log_unnorm(point) - max_log) * w;
      mass += dens;
      for (std::size_t u = 0; u < d; ++u) {
        mean[u] += dens * point[u];
        for (std::size_t v = 0; v < d; ++v) second(u, v) += dens * point[u] * point[v];
      }
    }
    double cell = step[0];
    if (d == 2) cell *= step[1];
    for (std::size_t u = 0; u < d; ++u) mean[u] /= mass;
    if (mean_out) *mean_out = mean;
    if (cov_out) {
      *cov_out = Mat(d, d);
      for (std::size_t u = 0; u < d; ++u)
        for (std::size_t v = 0; v < d; ++v) (*cov_out)(u, v) = second(u, v) / mass - mean[u] * mean[v];
    }
    return std::log(mass * cell) + max_log;
  };

  GridPosterior out;
  const double log_z = integrate(points_per_dim, &out.mean, &out.cov);
  const double log_z_coarse = integrate(points_per_dim / 2 + 1, nullptr, nullptr);
  out.log_norm = log_z;
  out.refine_delta = std::fabs(std::expm1(log_z_coarse - log_z));
  return out;
}

}  // namespace vfl
