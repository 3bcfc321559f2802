#pragma once

#include <vector>

#include "vfl/gaussian.hpp"
#include "vfl/gradients.hpp"
#include "vfl/model.hpp"

// Independent evaluation of the one-sample stopped objective behind the
// sticking-the-landing estimator. Samples are generated from `path`
// parameters while every log q is evaluated under the pinned `density`
// parameters; at path == density the gradient of this scalar w.r.t. the path
// parameters is exactly what the library's assembly routines compute. Only
// forward evaluations (predictor, log densities) are used here, never the
// gradient code under test.
namespace testsupport {

using namespace vfl;

struct StoppedEvalResult {
  double value = 0.0;
};

inline double stopped_elbo_sample(const ModelSpec& spec, std::vector<ClientModel>& models,
                                  const VariationalState& path, const VariationalState& density,
                                  const Vec& y, const Vec& offset, const NoiseBundle& noise,
                                  double extra_logp_constant = 0.0) {
  const int num_clients = static_cast<int>(models.size());
  const GammaFactor::Sample gs = path.gamma.sample_with(noise.gamma_eps_b, noise.gamma_eps_ls);

  double total = extra_logp_constant;

  // Shared-parameter prior and pinned entropy.
  if (path.gamma.has_b()) {
    total += intercept_log_prior(gs.value.b) - density.gamma.b_factor().logpdf({gs.value.b});
  }
  if (path.gamma.learns_sigma()) {
    total += half_normal_logpdf(gs.value.sigma, 1.0) + gs.log_sigma -
             density.gamma.log_sigma_factor().logpdf({gs.log_sigma});
  }

  std::vector<Vec> thetas(num_clients), preds(num_clients), zs(num_clients);
  for (int j = 0; j < num_clients; ++j) {
    thetas[j] = path.clients[j].theta.sample(noise.eps[j]);
    preds[j] = models[j].predictor(thetas[j]).pred;
    total += models[j].log_prior(thetas[j]).value;
    total -= density.clients[j].theta.logpdf(thetas[j]);
  }

  if (spec.formulation == Formulation::True) {
    Vec eta(y.size(), gs.value.b);
    if (!offset.empty())
      for (std::size_t i = 0; i < eta.size(); ++i) eta[i] += offset[i];
    for (int j = 0; j < num_clients; ++j) add_in_place(eta, preds[j]);
    total += log_lik(spec.family, y, eta, gs.value.sigma);
    return total;
  }

  for (int j = 0; j < num_clients; ++j) {
    if (path.clients[j].amortized()) {
      const auto& am_path = std::get<AmortizedAux>(path.clients[j].aux);
      const auto& am_density = std::get<AmortizedAux>(density.clients[j].aux);
      const Vec* ytake = am_path.takes_y() ? &y : nullptr;
      const AmortizedAux::Eval gen = am_path.eval(preds[j], ytake);
      zs[j] = am_path.sample(gen, noise.tau[j]);
      // The density is a pinned function of (theta, z): its net parameters do
      // not move, but its inputs follow the path sample's predictor.
      const AmortizedAux::Eval dens = am_density.eval(preds[j], ytake);
      total -= am_density.logpdf(dens, zs[j]);
    } else {
      const auto& mf_path = std::get<MeanFieldAux>(path.clients[j].aux);
      const auto& mf_density = std::get<MeanFieldAux>(density.clients[j].aux);
      zs[j] = mf_path.sample(noise.tau[j]);
      total -= mf_density.logpdf(zs[j]);
    }
    total += log_aux_conditional(zs[j], preds[j], spec.rho).value;
  }

  if (spec.formulation == Formulation::Power) {
    for (int j = 0; j < num_clients; ++j) {
      Vec others(y.size(), 0.0);
      for (int k = 0; k < num_clients; ++k)
        if (k != j) add_in_place(others, zs[k]);
      total +=
          loglik_power_j(spec.family, y, offset, preds[j], others, gs.value, num_clients).value;
    }
  } else {
    total += loglik_aux(spec.family, y, offset, zs, gs.value).value;
  }
  return total;
}

}  // namespace testsupport
