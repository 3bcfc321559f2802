#include "vfl/gradients.hpp"

#include <cmath>

#include "vfl/gaussian.hpp"

namespace vfl {

// ---------------------------------------------------------------------------
// GammaFactor
// ---------------------------------------------------------------------------

GammaFactor::GammaFactor(bool intercept, SigmaSpec sigma_spec, double init_scale)
    : has_b_(intercept), learn_sigma_(sigma_spec.learn), sigma_fixed_(sigma_spec.value) {
  if (has_b_) b_factor_ = ThetaFactor(1, true, 0.0, init_scale);
  if (learn_sigma_) {
    if (!(sigma_spec.value > 0.0)) throw DomainError("gamma: initial sigma must be positive");
    ls_factor_ = ThetaFactor(1, true, std::log(sigma_spec.value), init_scale);
  }
}

std::size_t GammaFactor::param_count() const {
  std::size_t c = 0;
  if (has_b_) c += b_factor_.param_count();
  if (learn_sigma_) c += ls_factor_.param_count();
  return c;
}

GammaFactor::Sample GammaFactor::sample(RngStream& stream) const {
  const double eb = has_b_ ? stream.standard_normal() : 0.0;
  const double el = learn_sigma_ ? stream.standard_normal() : 0.0;
  return sample_with(eb, el);
}

GammaFactor::Sample GammaFactor::sample_with(double eps_b, double eps_ls) const {
  Sample s;
  s.eps_b = eps_b;
  s.eps_ls = eps_ls;
  if (has_b_) s.value.b = b_factor_.sample({eps_b})[0];
  if (learn_sigma_) {
    s.log_sigma = ls_factor_.sample({eps_ls})[0];
    s.value.sigma = std::exp(s.log_sigma);
  } else {
    s.value.sigma = sigma_fixed_;
    s.log_sigma = std::log(sigma_fixed_);
  }
  return s;
}

double GammaFactor::elbo_terms(const Sample& s) const {
  double v = 0.0;
  if (has_b_) v += intercept_log_prior(s.value.b) - b_factor_.logpdf({s.value.b});
  if (learn_sigma_) {
    // HN(1) prior on sigma plus the log-scale Jacobian.
    v += half_normal_logpdf(s.value.sigma, 1.0) + s.log_sigma - ls_factor_.logpdf({s.log_sigma});
  }
  return v;
}

Vec GammaFactor::stl_grads(const Sample& s, double dlik_db, double dlik_dsigma) const {
  Vec g;
  g.reserve(param_count());
  if (has_b_) {
    const double db =
        dlik_db + dintercept_log_prior(s.value.b) + b_factor_.entropy_grad_at_sample({s.eps_b})[0];
    const Vec gb = b_factor_.chain_to_params({db}, {s.eps_b});
    g.insert(g.end(), gb.begin(), gb.end());
  }
  if (learn_sigma_) {
    const double sigma = s.value.sigma;
    const double dls = dlik_dsigma * sigma + (1.0 - sigma * sigma) +
                       ls_factor_.entropy_grad_at_sample({s.eps_ls})[0];
    const Vec gl = ls_factor_.chain_to_params({dls}, {s.eps_ls});
    g.insert(g.end(), gl.begin(), gl.end());
  }
  return g;
}

Vec GammaFactor::pack() const {
  Vec p;
  if (has_b_) {
    const Vec pb = b_factor_.pack();
    p.insert(p.end(), pb.begin(), pb.end());
  }
  if (learn_sigma_) {
    const Vec pl = ls_factor_.pack();
    p.insert(p.end(), pl.begin(), pl.end());
  }
  return p;
}

void GammaFactor::apply_update(const Vec& delta) {
  if (delta.size() != param_count()) throw ShapeError("gamma: update size mismatch");
  std::size_t at = 0;
  if (has_b_) {
    Vec d(delta.begin(), delta.begin() + b_factor_.param_count());
    b_factor_.apply_update(d);
    at += d.size();
  }
  if (learn_sigma_) {
    Vec d(delta.begin() + at, delta.end());
    ls_factor_.apply_update(d);
  }
}

void GammaFactor::unpack(const Vec& packed) {
  if (packed.size() != param_count()) throw ShapeError("gamma: pack size mismatch");
  std::size_t at = 0;
  if (has_b_) {
    Vec d(packed.begin(), packed.begin() + b_factor_.param_count());
    b_factor_.unpack(d);
    at += d.size();
  }
  if (learn_sigma_) {
    Vec d(packed.begin() + at, packed.end());
    ls_factor_.unpack(d);
  }
}

GammaValue GammaFactor::mean_value() const {
  GammaValue v;
  v.b = has_b_ ? b_factor_.mu()[0] : 0.0;
  v.sigma = learn_sigma_ ? std::exp(ls_factor_.mu()[0]) : sigma_fixed_;
  return v;
}

// ---------------------------------------------------------------------------
// Client steps
// ---------------------------------------------------------------------------

namespace {

// dD/dz with D = -log q(z|...): residual over variance, which at the sample
// equals tau / sigma.
Vec entropy_dz(const Vec& tau, const Vec& sigma) {
  Vec d(tau.size());
  for (std::size_t i = 0; i < tau.size(); ++i) d[i] = tau[i] / sigma[i];
  return d;
}

}  // namespace

ClientGrads client_step_augmented(const ClientModel& model, const ClientFactors& factors,
                                  const Vec& server_dz, double rho, const Vec& eps, const Vec& tau,
                                  const Vec* y_for_aux) {
  ClientGrads out;
  out.theta = factors.theta.sample(eps);
  const ClientModel::PredictorEval peval = model.predictor(out.theta);
  if (server_dz.size() != peval.pred.size())
    throw ProtocolError("client_step_augmented: server gradient has wrong length");

  Vec dtheta(out.theta.size(), 0.0);
  Vec dpred = Vec(peval.pred.size(), 0.0);
  double entropy_z = 0.0;
  Vec w;  // dL/dz

  if (factors.amortized()) {
    const auto& am = std::get<AmortizedAux>(factors.aux);
    const AmortizedAux::Eval aeval = am.eval(peval.pred, y_for_aux);
    out.z = am.sample(aeval, tau);
    const AuxConditional cond = log_aux_conditional(out.z, peval.pred, rho);
    entropy_z = -am.logpdf(aeval, out.z);
    w = add(server_dz, cond.dz);
    add_in_place(w, entropy_dz(tau, aeval.sigma));
    const AmortizedAux::Backprop bp = am.backward(aeval, w, tau);
    out.dpsi = bp.dpsi;
    dpred = add(cond.dpred, bp.dpred);
    out.local_elbo = cond.value + entropy_z;
  } else {
    const auto& mf = std::get<MeanFieldAux>(factors.aux);
    out.z = mf.sample(tau);
    const AuxConditional cond = log_aux_conditional(out.z, peval.pred, rho);
    entropy_z = -mf.logpdf(out.z);
    w = add(server_dz, cond.dz);
    add_in_place(w, entropy_dz(tau, mf.sigma()));
    out.dpsi = mf.chain_to_params(w, tau);
    dpred = cond.dpred;
    out.local_elbo = cond.value + entropy_z;
  }

  const ClientModel::PriorEval prior = model.log_prior(out.theta);
  add_in_place(dtheta, prior.dtheta);
  add_in_place(dtheta, factors.theta.entropy_grad_at_sample(eps));
  out.local_elbo += prior.value - factors.theta.logpdf(out.theta);

  if (model.has_rep_net()) out.dnet.assign(model.rep_net().param_count(), 0.0);
  model.predictor_pullback(peval, dpred, out.theta, dtheta,
                           model.has_rep_net() ? &out.dnet : nullptr);
  out.dphi = factors.theta.chain_to_params(dtheta, eps);
  return out;
}

PowerRound1 power_client_round1(const ClientModel& model, const ClientFactors& factors,
                                Family family, const Vec& y, const Vec& offset,
                                const Vec& z_others_sum, const GammaValue& gamma, int num_clients,
                                const Vec& eps, const Vec& tau) {
  PowerRound1 r;
  r.eps = eps;
  r.tau = tau;
  r.theta = factors.theta.sample(eps);
  r.peval = model.predictor(r.theta);
  r.lik = loglik_power_j(family, y, offset, r.peval.pred, z_others_sum, gamma, num_clients);
  return r;
}

ClientGrads power_client_round2(const ClientModel& model, const ClientFactors& factors,
                                const PowerRound1& round1, const Vec& cross_sum, double rho,
                                const Vec& y) {
  ClientGrads out;
  out.theta = round1.theta;
  const Vec& pred = round1.peval.pred;
  if (cross_sum.size() != pred.size())
    throw ProtocolError("power_client_round2: cross-gradient sum has wrong length");

  Vec dtheta(out.theta.size(), 0.0);
  Vec dpred = round1.lik.deta;  // dL_{0,j}/d(predictor)

  if (factors.amortized()) {
    const auto& am = std::get<AmortizedAux>(factors.aux);
    const AmortizedAux::Eval aeval = am.eval(pred, am.takes_y() ? &y : nullptr);
    out.z = am.sample(aeval, round1.tau);
    const AuxConditional cond = log_aux_conditional(out.z, pred, rho);
    Vec w = add(cross_sum, cond.dz);
    add_in_place(w, entropy_dz(round1.tau, aeval.sigma));
    const AmortizedAux::Backprop bp = am.backward(aeval, w, round1.tau);
    out.dpsi = bp.dpsi;
    add_in_place(dpred, cond.dpred);
    add_in_place(dpred, bp.dpred);
    out.local_elbo = cond.value - am.logpdf(aeval, out.z);
  } else {
    const auto& mf = std::get<MeanFieldAux>(factors.aux);
    out.z = mf.sample(round1.tau);
    const AuxConditional cond = log_aux_conditional(out.z, pred, rho);
    Vec w = add(cross_sum, cond.dz);
    add_in_place(w, entropy_dz(round1.tau, mf.sigma()));
    out.dpsi = mf.chain_to_params(w, round1.tau);
    add_in_place(dpred, cond.dpred);
    out.local_elbo = cond.value - mf.logpdf(out.z);
  }

  const ClientModel::PriorEval prior = model.log_prior(out.theta);
  add_in_place(dtheta, prior.dtheta);
  add_in_place(dtheta, factors.theta.entropy_grad_at_sample(round1.eps));
  out.local_elbo += prior.value - factors.theta.logpdf(out.theta);

  if (model.has_rep_net()) out.dnet.assign(model.rep_net().param_count(), 0.0);
  model.predictor_pullback(round1.peval, dpred, out.theta, dtheta,
                           model.has_rep_net() ? &out.dnet : nullptr);
  out.dphi = factors.theta.chain_to_params(dtheta, round1.eps);
  return out;
}

Vec regenerate_z(const ClientModel& model, const ClientFactors& factors, const Vec& theta,
                 const Vec& tau, const Vec* y_for_aux) {
  if (factors.amortized()) {
    const auto& am = std::get<AmortizedAux>(factors.aux);
    const ClientModel::PredictorEval peval = model.predictor(theta);
    const AmortizedAux::Eval aeval = am.eval(peval.pred, y_for_aux);
    return am.sample(aeval, tau);
  }
  return std::get<MeanFieldAux>(factors.aux).sample(tau);
}

ClientGrads client_step_true(const ClientModel& model, const ThetaFactor& theta_factor,
                             const Vec& deta_pull, const Vec& eps) {
  ClientGrads out;
  out.theta = theta_factor.sample(eps);
  const ClientModel::PredictorEval peval = model.predictor(out.theta);
  Vec dtheta(out.theta.size(), 0.0);
  const ClientModel::PriorEval prior = model.log_prior(out.theta);
  add_in_place(dtheta, prior.dtheta);
  add_in_place(dtheta, theta_factor.entropy_grad_at_sample(eps));
  out.local_elbo = prior.value - theta_factor.logpdf(out.theta);
  if (model.has_rep_net()) out.dnet.assign(model.rep_net().param_count(), 0.0);
  model.predictor_pullback(peval, deta_pull, out.theta, dtheta,
                           model.has_rep_net() ? &out.dnet : nullptr);
  out.dphi = theta_factor.chain_to_params(dtheta, eps);
  return out;
}

// ---------------------------------------------------------------------------
// Coherent ELBO evaluation
// ---------------------------------------------------------------------------

NoiseBundle draw_noise(const std::vector<ClientModel>& models, const VariationalState& state,
                       RngStream& stream) {
  NoiseBundle nb;
  if (state.gamma.has_b()) nb.gamma_eps_b = stream.standard_normal();
  if (state.gamma.learns_sigma()) nb.gamma_eps_ls = stream.standard_normal();
  for (const ClientModel& m : models) {
    nb.eps.push_back(stream.standard_normal_vec(static_cast<std::size_t>(m.theta_dim())));
    nb.tau.push_back(stream.standard_normal_vec(m.n()));
  }
  return nb;
}

ElboParts elbo_sample(const ModelSpec& spec, const std::vector<ClientModel>& models,
                      const VariationalState& state, const Vec& y, const Vec& offset,
                      const NoiseBundle& noise) {
  const int num_clients = static_cast<int>(models.size());
  const GammaFactor::Sample gs = state.gamma.sample_with(noise.gamma_eps_b, noise.gamma_eps_ls);

  ElboParts parts;
  parts.server_term = state.gamma.elbo_terms(gs);

  std::vector<Vec> thetas(num_clients), preds(num_clients), zs(num_clients);
  for (int j = 0; j < num_clients; ++j) {
    const ClientFactors& f = state.clients[j];
    thetas[j] = f.theta.sample(noise.eps[j]);
    preds[j] = models[j].predictor(thetas[j]).pred;
    parts.client_term += models[j].log_prior(thetas[j]).value - f.theta.logpdf(thetas[j]);
  }

  if (spec.formulation == Formulation::True) {
    Vec eta(y.size(), gs.value.b);
    if (!offset.empty())
      for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += offset[i];
    for (int j = 0; j < num_clients; ++j) add_in_place(eta, preds[j]);
    parts.server_term += log_lik(spec.family, y, eta, gs.value.sigma);
    return parts;
  }

  const bool power = spec.formulation == Formulation::Power;
  for (int j = 0; j < num_clients; ++j) {
    const ClientFactors& f = state.clients[j];
    if (f.amortized()) {
      const auto& am = std::get<AmortizedAux>(f.aux);
      const AmortizedAux::Eval e = am.eval(preds[j], am.takes_y() ? &y : nullptr);
      zs[j] = am.sample(e, noise.tau[j]);
      parts.client_term += -am.logpdf(e, zs[j]);
    } else {
      const auto& mf = std::get<MeanFieldAux>(f.aux);
      zs[j] = mf.sample(noise.tau[j]);
      parts.client_term += -mf.logpdf(zs[j]);
    }
    parts.client_term += log_aux_conditional(zs[j], preds[j], spec.rho).value;
  }

  if (power) {
    for (int j = 0; j < num_clients; ++j) {
      Vec others(y.size(), 0.0);
      for (int k = 0; k < num_clients; ++k)
        if (k != j) add_in_place(others, zs[k]);
      parts.server_term +=
          loglik_power_j(spec.family, y, offset, preds[j], others, gs.value, num_clients).value;
    }
  } else {
    parts.server_term += loglik_aux(spec.family, y, offset, zs, gs.value).value;
  }
  return parts;
}

ElboParts elbo_estimate(const ModelSpec& spec, const std::vector<ClientModel>& models,
                        const VariationalState& state, const Vec& y, const Vec& offset,
                        RngStream& stream, int num_samples) {
  if (num_samples < 1) throw DomainError("elbo_estimate: need at least one sample");
  ElboParts acc;
  for (int s = 0; s < num_samples; ++s) {
    const NoiseBundle nb = draw_noise(models, state, stream);
    const ElboParts p = elbo_sample(spec, models, state, y, offset, nb);
    acc.server_term += p.server_term;
    acc.client_term += p.client_term;
  }
  acc.server_term /= num_samples;
  acc.client_term /= num_samples;
  return acc;
}

}  // namespace vfl
