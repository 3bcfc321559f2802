#pragma once

#include "vfl/adam.hpp"
#include "vfl/model.hpp"
#include "vfl/transport.hpp"

namespace vfl {

// Maximum-marginal-likelihood fitting of the auxiliary variables: unadjusted
// Langevin sampling of theta conditional on z, Robbins-Monro ascent on z.
// The output is a MAP estimate z_hat together with theta draws from the
// CONDITIONAL target p(theta | y, z_hat; rho) - never the theta marginal,
// which is wider.
struct SoulConfig {
  std::uint64_t run_id = 1;
  std::uint64_t seed = 1;
  int outer_iterations = 1000;
  int inner_samples = 10;   // M Langevin draws per outer iteration
  double ula_step = 1e-3;   // h
  // Robbins-Monro schedule: delta_t = delta0 / (1 + max(0, t - hold) / tau).
  double rm_delta0 = 0.1;
  double rm_tau = 1000.0;
  int rm_hold = 0;
  // Tail averaging of the z iterates; 1.0 keeps the raw final iterate.
  double average_start_frac = 0.5;
  bool learn_sigma = false;
  double sigma_init = 1.0;
  double sigma_lr = 0.01;  // Adam rate for the shared-sigma point update
  double fixed_b = 0.0;
  double z_norm_bound = 1e6;  // divergence detector
};

struct SoulResult {
  std::vector<Vec> z_hat;              // tail-averaged MAP estimates
  std::vector<Vec> z_final;            // raw final iterates
  std::vector<Vec> theta_chain;        // final chain positions (conditional draws)
  std::vector<Vec> theta_cond_mean;    // running means of the conditional chains
  std::vector<double> grad_norm_trace; // sup norm of the stacked z gradient estimate
  std::vector<double> sigma_trace;
  double sigma_final = 1.0;
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  bool aborted = false;
  std::string abort_reason;
  std::uint64_t abort_iteration = 0;
};

// One unadjusted Langevin update: theta + h * grad + sqrt(2h) * noise.
Vec ula_step(const Vec& theta, const Vec& grad, double h, const Vec& noise);

// Gradient of log p(theta_j | z_j; rho) for the augmented model (the
// conditional depends only on the client's own block).
Vec soul_theta_grad_augmented(const ClientModel& model, const Vec& theta, const Vec& z_j,
                              double rho);

// Gradient of (1/J) log p(y | theta_j, z_-j) + log p(z_j|theta_j) + log p(theta_j).
Vec soul_theta_grad_power(const ClientModel& model, Family family, const Vec& theta, const Vec& y,
                          const Vec& offset, const Vec& z_j, const Vec& z_others,
                          const GammaValue& gamma, int num_clients, double rho);

// (1/M) sum_m d/dz_j log p(z_j | theta_m; rho): the prior piece of the z
// gradient, shared by both formulations.
Vec soul_z_prior_grad(const ClientModel& model, const std::vector<Vec>& theta_samples,
                      const Vec& z_j, double rho);

// Client j's cross piece for the power model: (1/M) sum_m dL0j/deta at
// eta_j(theta_m, z_-j); the same vector applies to every target k != j.
Vec soul_z_cross_grad_power(const ClientModel& model, Family family,
                            const std::vector<Vec>& theta_samples, const Vec& y,
                            const Vec& offset, const Vec& z_others, const GammaValue& gamma,
                            int num_clients);

// d/dsigma of the shared linear-gaussian likelihood averaged over the chain,
// plus the half-normal prior term, assembled by the caller.
double soul_sigma_grad_power(const ClientModel& model, const std::vector<Vec>& theta_samples,
                             const Vec& y, const Vec& offset, const Vec& z_others,
                             const GammaValue& gamma, int num_clients);

SoulResult run_soul(const ModelSpec& spec, const Dataset& data, const SoulConfig& cfg,
                    TransportNetwork* net = nullptr);

}  // namespace vfl
