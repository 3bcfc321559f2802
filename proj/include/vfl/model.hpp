#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vfl/dataset.hpp"
#include "vfl/mlp.hpp"
#include "vfl/vec.hpp"

namespace vfl {

enum class Family { LinearGaussian, Logistic, PoissonMultilevel, SplitnnBernoulli };
enum class Formulation { True, Augmented, Power };

Family family_from_name(const std::string& name);
std::string family_name(Family f);
Formulation formulation_from_name(const std::string& name);
std::string formulation_name(Formulation f);

struct SigmaSpec {
  bool learn = false;
  double value = 1.0;
};

struct PriorSpec {
  double mean = 0.0;
  double sd = 1.0;
};

struct ModelSpec {
  Family family = Family::Logistic;
  Formulation formulation = Formulation::Augmented;
  double rho = 0.0;
  bool intercept = false;          // learn a shared intercept b on the server
  SigmaSpec sigma;                 // linear-gaussian noise scale
  MlpSpec splitnn_rep;             // feature net for splitnn (last width = dim of w)
  int levels = 0;                  // remoteness levels for poisson-multilevel
  std::vector<PriorSpec> client_priors;  // empty = N(0,1) everywhere

  PriorSpec prior_for(int client) const;
  void validate(const Dataset& data) const;
};

// Shared parameters gamma = (b, sigma) as plain values; the variational
// factor over them lives in the federation layer.
struct GammaValue {
  double b = 0.0;
  double sigma = 1.0;
};

// ---------------------------------------------------------------------------
// Observation likelihood p(y | eta) and its derivatives. eta is the full
// linear predictor including intercept and offset.
// ---------------------------------------------------------------------------

double log_lik(Family f, const Vec& y, const Vec& eta, double sigma);
Vec dlog_lik_deta(Family f, const Vec& y, const Vec& eta, double sigma);
double dlog_lik_dsigma(const Vec& y, const Vec& eta, double sigma);  // linear-gaussian
void validate_response(Family f, const Vec& y);

struct LoglikAux {
  double value = 0.0;
  Vec deta;    // dvalue/deta_i; equals dvalue/dz_ij for every client j
  double db = 0.0;
  double dsigma = 0.0;  // linear-gaussian only
};

// Augmented-model likelihood term: eta = b + offset + sum_j z_j.
LoglikAux loglik_aux(Family f, const Vec& y, const Vec& offset, const std::vector<Vec>& z_blocks,
                     const GammaValue& gamma);

struct LoglikPower {
  double value = 0.0;  // (1/J) log p(y | eta_j)
  Vec deta;            // includes the 1/J weight; also dvalue/dz_k for every k != j
  double db = 0.0;
  double dsigma = 0.0;
};

// Client j's power-likelihood contribution: eta_j = b + offset + g_j + sum_{k!=j} z_k.
LoglikPower loglik_power_j(Family f, const Vec& y, const Vec& offset, const Vec& g_j,
                           const Vec& z_others_sum, const GammaValue& gamma, int num_clients);

// log p(z | predictor; rho): Gaussian with scalar scale rho.
struct AuxConditional {
  double value = 0.0;
  Vec dz;
  Vec dpred;
  double drho = 0.0;
};
AuxConditional log_aux_conditional(const Vec& z, const Vec& pred, double rho);

// ---------------------------------------------------------------------------
// Per-client model: the map theta_j -> predictor g_j(x_j, theta_j), the
// client prior log p(theta_j), and their pullbacks.
// ---------------------------------------------------------------------------

class ClientModel {
 public:
  // Linear-predictor families (linear-gaussian, logistic).
  ClientModel(Family family, Mat block, PriorSpec prior);
  // Poisson-multilevel: level-specific slopes with Gaussian/half-normal hyperpriors.
  ClientModel(Mat block, std::vector<int> group, int levels);
  // Splitnn: feature net plus Gaussian final-layer weights w.
  ClientModel(Mat block, const MlpSpec& rep_spec, RngStream& init_stream);

  Family family() const { return family_; }
  int theta_dim() const;
  std::size_t n() const { return block_.rows; }
  const Mat& block() const { return block_; }
  std::vector<std::string> theta_names() const;

  struct PredictorEval {
    Vec pred;
    Mat features;  // splitnn: n x h
    ForwardTape tape;
  };

  PredictorEval predictor(const Vec& theta) const;
  // Same map evaluated on other rows (test data).
  PredictorEval predictor_at(const Mat& block, const std::vector<int>& group,
                             const Vec& theta) const;

  // dtheta += (dpred/dtheta)^T dpred_bar. For splitnn, dnet (flat rep-net grads)
  // is also accumulated when non-null.
  void predictor_pullback(const PredictorEval& eval, const Vec& dpred_bar, const Vec& theta,
                          Vec& dtheta, Vec* dnet) const;

  struct PriorEval {
    double value = 0.0;
    Vec dtheta;
  };
  PriorEval log_prior(const Vec& theta) const;

  // A reasonable starting point for theta in optimizers and samplers.
  Vec theta_init() const;

  bool has_rep_net() const { return family_ == Family::SplitnnBernoulli; }
  MlpParams& rep_net() { return rep_net_; }
  const MlpParams& rep_net() const { return rep_net_; }

 private:
  PredictorEval predictor_impl(const Mat& block, const std::vector<int>& group,
                               const Vec& theta) const;

  Family family_;
  Mat block_;
  PriorSpec prior_;
  std::vector<int> group_;
  int levels_ = 0;
  MlpParams rep_net_;
};

// Builds the per-client models implied by (spec, data).
std::vector<ClientModel> make_client_models(const ModelSpec& spec, const Dataset& data,
                                            std::uint64_t seed);

// log p(gamma) for the learned shared parameters: b ~ N(0,1), sigma ~ HN(1)
// handled on the log scale by the caller.
double intercept_log_prior(double b);
double dintercept_log_prior(double b);

}  // namespace vfl
