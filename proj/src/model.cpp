#include "vfl/model.hpp"

#include <cmath>
#include <string>

#include "vfl/gaussian.hpp"
#include "vfl/rng.hpp"

namespace vfl {

Family family_from_name(const std::string& name) {
  if (name == "linear-gaussian") return Family::LinearGaussian;
  if (name == "logistic") return Family::Logistic;
  if (name == "poisson-multilevel") return Family::PoissonMultilevel;
  if (name == "splitnn-bernoulli") return Family::SplitnnBernoulli;
  throw ConfigError("unknown model family: " + name);
}

std::string family_name(Family f) {
  switch (f) {
    case Family::LinearGaussian:
      return "linear-gaussian";
    case Family::Logistic:
      return "logistic";
    case Family::PoissonMultilevel:
      return "poisson-multilevel";
    case Family::SplitnnBernoulli:
      return "splitnn-bernoulli";
  }
  return "?";
}

Formulation formulation_from_name(const std::string& name) {
  if (name == "true") return Formulation::True;
  if (name == "augmented") return Formulation::Augmented;
  if (name == "power") return Formulation::Power;
  throw ConfigError("unknown formulation: " + name);
}

std::string formulation_name(Formulation f) {
  switch (f) {
    case Formulation::True:
      return "true";
    case Formulation::Augmented:
      return "augmented";
    case Formulation::Power:
      return "power";
  }
  return "?";
}

PriorSpec ModelSpec::prior_for(int client) const {
  if (client_priors.empty()) return PriorSpec{};
  return client_priors.at(static_cast<std::size_t>(client));
}

void ModelSpec::validate(const Dataset& data) const {
  data.validate();
  if (formulation != Formulation::True) {
    if (!(rho > 0.0)) throw ConfigError("rho must be positive for augmented/power formulations");
  }
  if (family == Family::PoissonMultilevel) {
    if (data.offset.empty()) throw ConfigError("poisson-multilevel requires an offset column");
    if (data.group.empty()) throw ConfigError("poisson-multilevel requires group labels");
    if (levels < 1 || data.levels != levels)
      throw ConfigError("poisson-multilevel level count disagrees with dataset");
  }
  if (family == Family::SplitnnBernoulli) {
    if (splitnn_rep.widths.size() < 3) throw ConfigError("splitnn requires a feature-net spec");
  }
  if (!client_priors.empty() &&
      client_priors.size() != static_cast<std::size_t>(data.num_clients())) {
    throw ConfigError("client_priors size must match the number of clients");
  }
  validate_response(family, data.y);
}

// ---------------------------------------------------------------------------
// Likelihoods
// ---------------------------------------------------------------------------

namespace {

enum class LikKind { Gaussian, Bernoulli, Poisson };

LikKind lik_kind(Family f) {
  switch (f) {
    case Family::LinearGaussian:
      return LikKind::Gaussian;
    case Family::Logistic:
    case Family::SplitnnBernoulli:
      return LikKind::Bernoulli;
    case Family::PoissonMultilevel:
      return LikKind::Poisson;
  }
  return LikKind::Gaussian;
}

}  // namespace

void validate_response(Family f, const Vec& y) {
  switch (lik_kind(f)) {
    case LikKind::Bernoulli:
      for (double v : y) {
        if (v != 0.0 && v != 1.0) throw DomainError("bernoulli response must be 0/1");
      }
      break;
    case LikKind::Poisson:
      for (double v : y) {
        if (v < 0.0 || v != std::floor(v)) throw DomainError("poisson response must be counts");
      }
      break;
    case LikKind::Gaussian:
      check_finite(y, "response");
      break;
  }
}

double log_lik(Family f, const Vec& y, const Vec& eta, double sigma) {
  check_same_dim(y, eta, "log_lik");
  switch (lik_kind(f)) {
    case LikKind::Gaussian:
      return gaussian_logpdf(y, eta, sigma);
    case LikKind::Bernoulli: {
      double total = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) total += y[i] * eta[i] - log1p_exp(eta[i]);
      return total;
    }
    case LikKind::Poisson: {
      double total = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i)
        total += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
      return total;
    }
  }
  return 0.0;
}

Vec dlog_lik_deta(Family f, const Vec& y, const Vec& eta, double sigma) {
  check_same_dim(y, eta, "dlog_lik_deta");
  Vec d(y.size());
  switch (lik_kind(f)) {
    case LikKind::Gaussian: {
      const double s2 = sigma * sigma;
      for (std::size_t i = 0; i < y.size(); ++i) d[i] = (y[i] - eta[i]) / s2;
      break;
    }
    case LikKind::Bernoulli:
      for (std::size_t i = 0; i < y.size(); ++i) d[i] = y[i] - sigmoid(eta[i]);
      break;
    case LikKind::Poisson:
      for (std::size_t i = 0; i < y.size(); ++i) d[i] = y[i] - std::exp(eta[i]);
      break;
  }
  return d;
}

double dlog_lik_dsigma(const Vec& y, const Vec& eta, double sigma) {
  check_same_dim(y, eta, "dlog_lik_dsigma");
  double d = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - eta[i];
    d += r * r / (sigma * sigma * sigma) - 1.0 / sigma;
  }
  return d;
}

namespace {

Vec build_eta(const Vec& offset, double b, std::size_t n) {
  Vec eta(n, b);
  if (!offset.empty()) {
    if (offset.size() != n) throw ShapeError("offset length mismatch");
    for (std::size_t i = 0; i < n; ++i) eta[i] += offset[i];
  }
  return eta;
}

}  // namespace

LoglikAux loglik_aux(Family f, const Vec& y, const Vec& offset, const std::vector<Vec>& z_blocks,
                     const GammaValue& gamma) {
  const std::size_t n = y.size();
  Vec eta = build_eta(offset, gamma.b, n);
  for (const Vec& z : z_blocks) {
    check_same_dim(z, eta, "loglik_aux z block");
    for (std::size_t i = 0; i < n; ++i) eta[i] += z[i];
  }
  LoglikAux out;
  out.value = log_lik(f, y, eta, gamma.sigma);
  out.deta = dlog_lik_deta(f, y, eta, gamma.sigma);
  out.db = sum(out.deta);
  if (lik_kind(f) == LikKind::Gaussian) out.dsigma = dlog_lik_dsigma(y, eta, gamma.sigma);
  return out;
}

LoglikPower loglik_power_j(Family f, const Vec& y, const Vec& offset, const Vec& g_j,
                           const Vec& z_others_sum, const GammaValue& gamma, int num_clients) {
  if (num_clients < 1) throw DomainError("loglik_power_j: need at least one client");
  const std::size_t n = y.size();
  Vec eta = build_eta(offset, gamma.b, n);
  check_same_dim(g_j, eta, "loglik_power_j g_j");
  check_same_dim(z_others_sum, eta, "loglik_power_j z_others");
  for (std::size_t i = 0; i < n; ++i) eta[i] += g_j[i] + z_others_sum[i];
  const double w = 1.0 / static_cast<double>(num_clients);
  LoglikPower out;
  out.value = w * log_lik(f, y, eta, gamma.sigma);
  out.deta = scale(dlog_lik_deta(f, y, eta, gamma.sigma), w);
  out.db = sum(out.deta);
  if (lik_kind(f) == LikKind::Gaussian) out.dsigma = w * dlog_lik_dsigma(y, eta, gamma.sigma);
  return out;
}

AuxConditional log_aux_conditional(const Vec& z, const Vec& pred, double rho) {
  if (!(rho > 0.0)) throw DomainError("log_aux_conditional: rho must be positive");
  AuxConditional out;
  out.value = gaussian_logpdf(z, pred, rho);
  GaussianGrads g = gaussian_logpdf_grads(z, pred, rho);
  out.dz = std::move(g.dx);
  out.dpred = std::move(g.dmean);
  out.drho = g.dscale_scalar;
  return out;
}

// ---------------------------------------------------------------------------
// ClientModel
// ---------------------------------------------------------------------------

ClientModel::ClientModel(Family family, Mat block, PriorSpec prior)
    : family_(family), block_(std::move(block)), prior_(prior) {
  if (family_ == Family::PoissonMultilevel || family_ == Family::SplitnnBernoulli) {
    throw ConfigError("wrong ClientModel constructor for this family");
  }
}

ClientModel::ClientModel(Mat block, std::vector<int> group, int levels)
    : family_(Family::PoissonMultilevel),
      block_(std::move(block)),
      group_(std::move(group)),
      levels_(levels) {
  if (levels_ < 1) throw ConfigError("multilevel client needs levels >= 1");
  if (group_.size() != block_.rows) throw ShapeError("multilevel client: group length mismatch");
}

ClientModel::ClientModel(Mat block, const MlpSpec& rep_spec, RngStream& init_stream)
    : family_(Family::SplitnnBernoulli), block_(std::move(block)) {
  MlpSpec spec = rep_spec;
  spec.widths.front() = static_cast<int>(block_.cols);
  spec.validate();
  rep_net_ = mlp_init(spec, init_stream);
}

int ClientModel::theta_dim() const {
  const int p = static_cast<int>(block_.cols);
  switch (family_) {
    case Family::LinearGaussian:
    case Family::Logistic:
      return p;
    case Family::PoissonMultilevel:
      return 3 * levels_ * p;  // beta, mu, log-sigma per level
    case Family::SplitnnBernoulli:
      return rep_net_.spec.output_dim();
  }
  return p;
}

std::vector<std::string> ClientModel::theta_names() const {
  std::vector<std::string> names;
  const int p = static_cast<int>(block_.cols);
  switch (family_) {
    case Family::LinearGaussian:
    case Family::Logistic:
      for (int k = 0; k < p; ++k) names.push_back("beta[" + std::to_string(k) + "]");
      break;
    case Family::PoissonMultilevel:
      for (int r = 0; r < levels_; ++r)
        for (int k = 0; k < p; ++k)
          names.push_back("beta_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]");
      for (int r = 0; r < levels_; ++r)
        for (int k = 0; k < p; ++k)
          names.push_back("mu_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]");
      for (int r = 0; r < levels_; ++r)
        for (int k = 0; k < p; ++k)
          names.push_back("log_sigma_r" + std::to_string(r + 1) + "[" + std::to_string(k) + "]");
      break;
    case Family::SplitnnBernoulli:
      for (int k = 0; k < theta_dim(); ++k) names.push_back("w[" + std::to_string(k) + "]");
      break;
  }
  return names;
}

ClientModel::PredictorEval ClientModel::predictor_impl(const Mat& block,
                                                       const std::vector<int>& group,
                                                       const Vec& theta) const {
  if (static_cast<int>(theta.size()) != theta_dim())
    throw ShapeError("predictor: theta dim mismatch");
  PredictorEval eval;
  const std::size_t n = block.rows;
  const std::size_t p = block.cols;
  switch (family_) {
    case Family::LinearGaussian:
    case Family::Logistic:
      eval.pred = matvec(block, theta);
      break;
    case Family::PoissonMultilevel: {
      if (group.size() != n) throw DomainError("multilevel predictor: missing group labels");
      eval.pred.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const int r = group[i];
        if (r < 0 || r >= levels_) throw DomainError("multilevel predictor: bad level index");
        const double* row = block.row_ptr(i);
        double s = 0.0;
        for (std::size_t k = 0; k < p; ++k) s += row[k] * theta[r * p + k];
        eval.pred[i] = s;
      }
      break;
    }
    case Family::SplitnnBernoulli: {
      MlpForwardResult f = mlp_forward(rep_net_, block);
      eval.features = std::move(f.output);
      eval.tape = std::move(f.tape);
      eval.pred = matvec(eval.features, theta);
      break;
    }
  }
  return eval;
}

ClientModel::PredictorEval ClientModel::predictor(const Vec& theta) const {
  return predictor_impl(block_, group_, theta);
}

ClientModel::PredictorEval ClientModel::predictor_at(const Mat& block,
                                                     const std::vector<int>& group,
                                                     const Vec& theta) const {
  return predictor_impl(block, group, theta);
}

void ClientModel::predictor_pullback(const PredictorEval& eval, const Vec& dpred_bar,
                                     const Vec& theta, Vec& dtheta, Vec* dnet) const {
  if (dtheta.size() != static_cast<std::size_t>(theta_dim()))
    throw ShapeError("predictor_pullback: dtheta dim mismatch");
  const std::size_t p = block_.cols;
  switch (family_) {
    case Family::LinearGaussian:
    case Family::Logistic: {
      Vec g = matvec_t(block_, dpred_bar);
      add_in_place(dtheta, g);
      break;
    }
    case Family::PoissonMultilevel: {
      for (std::size_t i = 0; i < block_.rows; ++i) {
        const int r = group_[i];
        const double* row = block_.row_ptr(i);
        for (std::size_t k = 0; k < p; ++k) dtheta[r * p + k] += row[k] * dpred_bar[i];
      }
      break;
    }
    case Family::SplitnnBernoulli: {
      Vec g = matvec_t(eval.features, dpred_bar);  // w direction
      add_in_place(dtheta, g);
      if (dnet != nullptr) {
        const std::size_t h = eval.features.cols;
        Mat upstream(eval.features.rows, h);
        for (std::size_t i = 0; i < upstream.rows; ++i)
          for (std::size_t k = 0; k < h; ++k) upstream(i, k) = dpred_bar[i] * theta[k];
        MlpBackwardResult back = mlp_backward(rep_net_, eval.tape, upstream);
        add_in_place(*dnet, back.param_grads);
      }
      break;
    }
  }
}

ClientModel::PriorEval ClientModel::log_prior(const Vec& theta) const {
  if (static_cast<int>(theta.size()) != theta_dim()) throw ShapeError("log_prior: theta dim");
  PriorEval out;
  out.dtheta.assign(theta.size(), 0.0);
  switch (family_) {
    case Family::LinearGaussian:
    case Family::Logistic: {
      for (std::size_t k = 0; k < theta.size(); ++k) {
        out.value += gaussian_logpdf1(theta[k], prior_.mean, prior_.sd);
        out.dtheta[k] = -(theta[k] - prior_.mean) / (prior_.sd * prior_.sd);
      }
      break;
    }
    case Family::SplitnnBernoulli: {
      // w ~ N(0, 1)
      for (std::size_t k = 0; k < theta.size(); ++k) {
        out.value += gaussian_logpdf1(theta[k], 0.0, 1.0);
        out.dtheta[k] = -theta[k];
      }
      break;
    }
    case Family::PoissonMultilevel: {
      const std::size_t p = block_.cols;
      const std::size_t lv = static_cast<std::size_t>(levels_);
      const std::size_t mu_at = lv * p;
      const std::size_t ls_at = 2 * lv * p;
      for (std::size_t r = 0; r < lv; ++r) {
        for (std::size_t k = 0; k < p; ++k) {
          const double beta = theta[r * p + k];
          const double mu = theta[mu_at + r * p + k];
          const double log_sigma = theta[ls_at + r * p + k];
          const double sigma = std::exp(log_sigma);
          // beta ~ N(mu, sigma), mu ~ N(0,1), sigma ~ HN(1) with the log-scale Jacobian.
          out.value += gaussian_logpdf1(beta, mu, sigma);
          out.value += gaussian_logpdf1(mu, 0.0, 1.0);
          out.value += half_normal_logpdf(sigma, 1.0) + log_sigma;
          const double resid = (beta - mu) / (sigma * sigma);
          out.dtheta[r * p + k] += -resid;
          out.dtheta[mu_at + r * p + k] += resid - mu;
          out.dtheta[ls_at + r * p + k] +=
              (beta - mu) * (beta - mu) / (sigma * sigma) - sigma * sigma;
        }
      }
      break;
    }
  }
  return out;
}

Vec ClientModel::theta_init() const {
  Vec t(theta_dim(), 0.0);
  if (family_ == Family::LinearGaussian || family_ == Family::Logistic) {
    for (double& v : t) v = prior_.mean;
  }
  return t;
}

std::vector<ClientModel> make_client_models(const ModelSpec& spec, const Dataset& data,
                                            std::uint64_t seed) {
  std::vector<ClientModel> clients;
  for (int j = 0; j < data.num_clients(); ++j) {
    switch (spec.family) {
      case Family::LinearGaussian:
      case Family::Logistic:
        clients.emplace_back(spec.family, data.blocks[j], spec.prior_for(j));
        break;
      case Family::PoissonMultilevel:
        clients.emplace_back(data.blocks[j], data.group, spec.levels);
        break;
      case Family::SplitnnBernoulli: {
        RngStream init(seed, actor_stream(2000 + static_cast<std::uint64_t>(j), 0));
        clients.emplace_back(data.blocks[j], spec.splitnn_rep, init);
        break;
      }
    }
  }
  return clients;
}

double intercept_log_prior(double b) { return gaussian_logpdf1(b, 0.0, 1.0); }
double dintercept_log_prior(double b) { return -b; }

}  // namespace vfl
