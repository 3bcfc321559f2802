#include "vfl/factors.hpp"

#include <cmath>

#include "vfl/gaussian.hpp"

namespace vfl {

// ---------------------------------------------------------------------------
// ThetaFactor
// ---------------------------------------------------------------------------

ThetaFactor::ThetaFactor(int dim, bool diagonal, double mu0, double scale0)
    : diagonal_(diagonal), mu_(dim, mu0), diag_raw_(dim, softplus_inv(scale0 - kScaleFloor)) {
  if (!(scale0 > kScaleFloor)) throw DomainError("ThetaFactor: initial scale too small");
  if (!diagonal_) lower_.assign(static_cast<std::size_t>(dim) * (dim - 1) / 2, 0.0);
}

ThetaFactor ThetaFactor::from_moments(const Vec& mean, const Mat& cov) {
  if (cov.rows != mean.size() || cov.cols != mean.size())
    throw ShapeError("ThetaFactor::from_moments: dims disagree");
  const Mat l = cholesky(cov);
  ThetaFactor f;
  f.diagonal_ = false;
  f.mu_ = mean;
  f.diag_raw_.resize(mean.size());
  f.lower_.assign(mean.size() * (mean.size() - 1) / 2, 0.0);
  for (int a = 0; a < f.dim(); ++a) {
    f.diag_raw_[a] = softplus_inv(l(a, a) - kScaleFloor);
    for (int b = 0; b < a; ++b) f.lower_[f.lower_index(a, b)] = l(a, b);
  }
  return f;
}

std::size_t ThetaFactor::lower_index(int a, int b) const {
  return static_cast<std::size_t>(a) * (a - 1) / 2 + b;
}

std::size_t ThetaFactor::param_count() const {
  return mu_.size() + diag_raw_.size() + lower_.size();
}

Vec ThetaFactor::pack() const {
  Vec p;
  p.reserve(param_count());
  p.insert(p.end(), mu_.begin(), mu_.end());
  p.insert(p.end(), diag_raw_.begin(), diag_raw_.end());
  p.insert(p.end(), lower_.begin(), lower_.end());
  return p;
}

void ThetaFactor::unpack(const Vec& packed) {
  if (packed.size() != param_count()) throw ShapeError("ThetaFactor::unpack: wrong size");
  std::size_t at = 0;
  for (double& v : mu_) v = packed[at++];
  for (double& v : diag_raw_) v = packed[at++];
  for (double& v : lower_) v = packed[at++];
}

void ThetaFactor::apply_update(const Vec& delta) {
  if (delta.size() != param_count()) throw ShapeError("ThetaFactor::apply_update: wrong size");
  std::size_t at = 0;
  for (double& v : mu_) v += delta[at++];
  for (double& v : diag_raw_) v += delta[at++];
  for (double& v : lower_) v += delta[at++];
}

Vec ThetaFactor::diag_scale() const {
  Vec s(diag_raw_.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus(diag_raw_[i]) + kScaleFloor;
  return s;
}

Mat ThetaFactor::scale_matrix() const {
  const int d = dim();
  Mat l(d, d, 0.0);
  const Vec ds = diag_scale();
  for (int a = 0; a < d; ++a) {
    l(a, a) = ds[a];
    if (!diagonal_)
      for (int b = 0; b < a; ++b) l(a, b) = lower_[lower_index(a, b)];
  }
  return l;
}

Vec ThetaFactor::marginal_std() const {
  const Vec ds = diag_scale();
  Vec out(mu_.size());
  for (int a = 0; a < dim(); ++a) {
    double s2 = ds[a] * ds[a];
    if (!diagonal_)
      for (int b = 0; b < a; ++b) {
        const double v = lower_[lower_index(a, b)];
        s2 += v * v;
      }
    out[a] = std::sqrt(s2);
  }
  return out;
}

Vec ThetaFactor::sample(const Vec& eps) const {
  if (eps.size() != mu_.size()) throw ShapeError("ThetaFactor::sample: eps dim");
  const Vec ds = diag_scale();
  Vec theta = mu_;
  for (int a = 0; a < dim(); ++a) {
    theta[a] += ds[a] * eps[a];
    if (!diagonal_)
      for (int b = 0; b < a; ++b) theta[a] += lower_[lower_index(a, b)] * eps[b];
  }
  return theta;
}

double ThetaFactor::logpdf(const Vec& theta) const {
  if (theta.size() != mu_.size()) throw ShapeError("ThetaFactor::logpdf: dim");
  const Mat l = scale_matrix();
  const Vec u = solve_lower(l, sub(theta, mu_));
  double logdet = 0.0;
  for (int a = 0; a < dim(); ++a) logdet += std::log(l(a, a));
  return -0.5 * dim() * kLogTwoPi - logdet - 0.5 * dot(u, u);
}

Vec ThetaFactor::dlogpdf_dtheta(const Vec& theta) const {
  const Mat l = scale_matrix();
  const Vec u = solve_lower(l, sub(theta, mu_));
  return scale(solve_upper_t(l, u), -1.0);
}

Vec ThetaFactor::entropy_grad_at_sample(const Vec& eps) const {
  // theta - mu = L eps exactly, so -dlogq/dtheta = L^{-T} eps.
  const Mat l = scale_matrix();
  return solve_upper_t(l, eps);
}

Vec ThetaFactor::chain_to_params(const Vec& dtheta, const Vec& eps) const {
  if (dtheta.size() != mu_.size()) throw ShapeError("ThetaFactor::chain_to_params: dim");
  Vec g(param_count(), 0.0);
  const int d = dim();
  for (int a = 0; a < d; ++a) g[a] = dtheta[a];
  for (int a = 0; a < d; ++a)
    g[d + a] = dtheta[a] * eps[a] * softplus_prime(diag_raw_[a]);
  if (!diagonal_) {
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < a; ++b) g[2 * d + lower_index(a, b)] = dtheta[a] * eps[b];
  }
  return g;
}

// ---------------------------------------------------------------------------
// MeanFieldAux
// ---------------------------------------------------------------------------

MeanFieldAux::MeanFieldAux(std::size_t n, double mu0, double sigma0)
    : mu_(n, mu0), sigma_raw_(n, softplus_inv(sigma0 - kScaleFloor)) {
  if (!(sigma0 > kScaleFloor)) throw DomainError("MeanFieldAux: initial sigma too small");
}

Vec MeanFieldAux::pack() const {
  Vec p;
  p.reserve(param_count());
  p.insert(p.end(), mu_.begin(), mu_.end());
  p.insert(p.end(), sigma_raw_.begin(), sigma_raw_.end());
  return p;
}

void MeanFieldAux::unpack(const Vec& packed) {
  if (packed.size() != param_count()) throw ShapeError("MeanFieldAux::unpack: wrong size");
  std::size_t at = 0;
  for (double& v : mu_) v = packed[at++];
  for (double& v : sigma_raw_) v = packed[at++];
}

void MeanFieldAux::apply_update(const Vec& delta) {
  if (delta.size() != param_count()) throw ShapeError("MeanFieldAux::apply_update: wrong size");
  std::size_t at = 0;
  for (double& v : mu_) v += delta[at++];
  for (double& v : sigma_raw_) v += delta[at++];
}

Vec MeanFieldAux::sigma() const {
  Vec s(sigma_raw_.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = softplus(sigma_raw_[i]) + kScaleFloor;
  return s;
}

Vec MeanFieldAux::sample(const Vec& tau) const {
  if (tau.size() != mu_.size()) throw ShapeError("MeanFieldAux::sample: tau dim");
  const Vec s = sigma();
  Vec z(mu_.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu_[i] + s[i] * tau[i];
  return z;
}

double MeanFieldAux::logpdf(const Vec& z) const { return gaussian_logpdf(z, mu_, sigma()); }

Vec MeanFieldAux::dlogpdf_dz(const Vec& z) const {
  const Vec s = sigma();
  Vec d(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) d[i] = -(z[i] - mu_[i]) / (s[i] * s[i]);
  return d;
}

Vec MeanFieldAux::chain_to_params(const Vec& w, const Vec& tau) const {
  check_same_dim(w, mu_, "MeanFieldAux::chain_to_params");
  Vec g(param_count(), 0.0);
  const std::size_t n = mu_.size();
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = w[i];
    g[n + i] = w[i] * tau[i] * softplus_prime(sigma_raw_[i]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// AmortizedAux
// ---------------------------------------------------------------------------

AmortizedAux::AmortizedAux(const MlpSpec& spec, bool takes_y, RngStream& init_stream)
    : takes_y_(takes_y) {
  MlpSpec s = spec;
  s.widths.front() = takes_y_ ? 2 : 1;
  if (s.widths.back() != 2) throw ConfigError("AmortizedAux: net needs exactly 2 output heads");
  net_ = mlp_init(s, init_stream);
}

void AmortizedAux::apply_update(const Vec& delta) {
  Vec flat = net_.flatten();
  add_in_place(flat, delta);
  net_.unflatten(flat);
}

AmortizedAux::Eval AmortizedAux::eval(const Vec& pred, const Vec* y) const {
  const std::size_t n = pred.size();
  if (takes_y_ && y == nullptr)
    throw ProtocolError("AmortizedAux: this family conditions on y, none supplied");
  Eval e;
  e.inputs = Mat(n, takes_y_ ? 2 : 1);
  for (std::size_t i = 0; i < n; ++i) {
    e.inputs(i, 0) = pred[i];
    if (takes_y_) e.inputs(i, 1) = (*y)[i];
  }
  MlpForwardResult f = mlp_forward(net_, e.inputs);
  e.tape = std::move(f.tape);
  e.mu.resize(n);
  e.sraw.resize(n);
  e.sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    e.mu[i] = f.output(i, 0);
    e.sraw[i] = f.output(i, 1);
    e.sigma[i] = softplus(e.sraw[i]) + kScaleFloor;
  }
  return e;
}

Vec AmortizedAux::sample(const Eval& e, const Vec& tau) const {
  check_same_dim(tau, e.mu, "AmortizedAux::sample");
  Vec z(e.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = e.mu[i] + e.sigma[i] * tau[i];
  return z;
}

double AmortizedAux::logpdf(const Eval& e, const Vec& z) const {
  return gaussian_logpdf(z, e.mu, e.sigma);
}

AmortizedAux::Backprop AmortizedAux::backward(const Eval& e, const Vec& w, const Vec& tau) const {
  const std::size_t n = e.mu.size();
  check_same_dim(w, e.mu, "AmortizedAux::backward");

  // Sample path: z = mu + sigma * tau. This is the only path that reaches the
  // net parameters under STL.
  Mat up_sample(n, 2);
  // Conditioning path: -log q's parameters move with theta through the
  // inputs; add that on top for the input gradient only.
  Mat up_total(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double dsig = softplus_prime(e.sraw[i]);
    up_sample(i, 0) = w[i];
    up_sample(i, 1) = w[i] * tau[i] * dsig;
    const double dmu_density = -tau[i] / e.sigma[i];
    const double dsigma_density = (1.0 - tau[i] * tau[i]) / e.sigma[i];
    up_total(i, 0) = up_sample(i, 0) + dmu_density;
    up_total(i, 1) = up_sample(i, 1) + dsigma_density * dsig;
  }

  Backprop out;
  out.dpsi = mlp_backward(net_, e.tape, up_sample).param_grads;
  Mat igrads = mlp_backward(net_, e.tape, up_total).input_grads;
  out.dpred.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.dpred[i] = igrads(i, 0);
  return out;
}

std::size_t aux_param_count(const AuxFactor& aux) {
  return std::visit([](const auto& a) { return a.param_count(); }, aux);
}

Vec aux_pack(const AuxFactor& aux) {
  return std::visit([](const auto& a) { return a.pack(); }, aux);
}

void aux_apply_update(AuxFactor& aux, const Vec& delta) {
  std::visit([&](auto& a) { a.apply_update(delta); }, aux);
}

}  // namespace vfl
