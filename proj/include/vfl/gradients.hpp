#pragma once

#include "vfl/factors.hpp"
#include "vfl/model.hpp"
#include "vfl/rng.hpp"

namespace vfl {

// ---------------------------------------------------------------------------
// Server-held variational factor over the shared parameters gamma = (b, sigma).
// b ~ N(0,1); sigma ~ HN(1), handled on the log scale.
// ---------------------------------------------------------------------------

class GammaFactor {
 public:
  GammaFactor() = default;
  GammaFactor(bool intercept, SigmaSpec sigma_spec, double init_scale = 0.1);

  bool has_b() const { return has_b_; }
  bool learns_sigma() const { return learn_sigma_; }
  std::size_t param_count() const;

  struct Sample {
    GammaValue value;
    double eps_b = 0.0;
    double eps_ls = 0.0;
    double log_sigma = 0.0;
  };

  // Draws one eps per learned scalar (in order: b, then log sigma).
  Sample sample(RngStream& stream) const;
  // Deterministic variant for oracles and replays.
  Sample sample_with(double eps_b, double eps_ls) const;

  // log p(gamma) - log q(gamma) at the sample (zero when nothing is learned).
  double elbo_terms(const Sample& s) const;

  // STL gradient for the factor parameters given the likelihood derivatives.
  Vec stl_grads(const Sample& s, double dlik_db, double dlik_dsigma) const;

  Vec pack() const;
  void apply_update(const Vec& delta);
  void unpack(const Vec& packed);

  GammaValue mean_value() const;
  const ThetaFactor& b_factor() const { return b_factor_; }
  const ThetaFactor& log_sigma_factor() const { return ls_factor_; }

 private:
  bool has_b_ = false;
  bool learn_sigma_ = false;
  double sigma_fixed_ = 1.0;
  ThetaFactor b_factor_;
  ThetaFactor ls_factor_;
};

// ---------------------------------------------------------------------------
// Client-side STL gradient assembly.
// ---------------------------------------------------------------------------

struct ClientGrads {
  Vec dphi;            // packed ThetaFactor gradient (ascent direction)
  Vec dpsi;            // packed aux-factor gradient
  Vec dnet;            // splitnn feature-net gradient (empty otherwise)
  Vec theta;           // the sample behind the estimate
  Vec z;               // the sample behind the estimate
  double local_elbo = 0.0;  // L_j (augmented) or L_{1,j} (power)
};

// Augmented model, one client, one STL sample. server_dz is dL_0/dz_j as
// received from the server.
ClientGrads client_step_augmented(const ClientModel& model, const ClientFactors& factors,
                                  const Vec& server_dz, double rho, const Vec& eps,
                                  const Vec& tau, const Vec* y_for_aux = nullptr);

// Power model runs in two rounds; round 1 evaluates the client's own
// likelihood piece at the broadcast z, round 2 assembles the update once the
// server returns the cross-gradient sum.
struct PowerRound1 {
  Vec eps;
  Vec tau;
  Vec theta;
  ClientModel::PredictorEval peval;
  LoglikPower lik;  // includes deta == cross-gradient toward every other client
};

PowerRound1 power_client_round1(const ClientModel& model, const ClientFactors& factors,
                                Family family, const Vec& y, const Vec& offset,
                                const Vec& z_others_sum, const GammaValue& gamma, int num_clients,
                                const Vec& eps, const Vec& tau);

ClientGrads power_client_round2(const ClientModel& model, const ClientFactors& factors,
                                const PowerRound1& round1, const Vec& cross_sum, double rho,
                                const Vec& y);

// Regenerates the send-sample z at the current factor state, reusing the
// iteration's (theta, tau).
Vec regenerate_z(const ClientModel& model, const ClientFactors& factors, const Vec& theta,
                 const Vec& tau, const Vec* y_for_aux);

// True-model client gradient (no auxiliary variables): deta_pull is
// dL/d(predictor) from the shared likelihood.
ClientGrads client_step_true(const ClientModel& model, const ThetaFactor& theta_factor,
                             const Vec& deta_pull, const Vec& eps);

// ---------------------------------------------------------------------------
// Coherent single-sample ELBO evaluation (all pieces at one joint draw).
// ---------------------------------------------------------------------------

struct VariationalState {
  std::vector<ClientFactors> clients;
  GammaFactor gamma;
};

struct NoiseBundle {
  double gamma_eps_b = 0.0;
  double gamma_eps_ls = 0.0;
  std::vector<Vec> eps;  // per client
  std::vector<Vec> tau;  // per client
};

NoiseBundle draw_noise(const std::vector<ClientModel>& models, const VariationalState& state,
                       RngStream& stream);

struct ElboParts {
  double server_term = 0.0;  // L_0 (+ gamma prior/entropy), or sum of L_0j for power
  double client_term = 0.0;  // sum of L_j, or sum of L_1j
  double total() const { return server_term + client_term; }
};

ElboParts elbo_sample(const ModelSpec& spec, const std::vector<ClientModel>& models,
                      const VariationalState& state, const Vec& y, const Vec& offset,
                      const NoiseBundle& noise);

// Multi-sample Monte Carlo average.
ElboParts elbo_estimate(const ModelSpec& spec, const std::vector<ClientModel>& models,
                        const VariationalState& state, const Vec& y, const Vec& offset,
                        RngStream& stream, int num_samples);

}  // namespace vfl
