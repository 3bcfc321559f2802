#pragma once

#include <variant>

#include "vfl/mlp.hpp"
#include "vfl/rng.hpp"
#include "vfl/vec.hpp"

namespace vfl {

// Scales are stored unconstrained and mapped through softplus with this floor.
inline constexpr double kScaleFloor = 1e-6;

// Gaussian q(theta) = N(mu, L L^T) with L lower triangular, softplus-positive
// diagonal. Parameters pack as [mu | diag_raw | strict_lower_rows].
class ThetaFactor {
 public:
  ThetaFactor() = default;
  ThetaFactor(int dim, bool diagonal, double mu0, double scale0);

  // Exact full-covariance install (testing and oracles).
  static ThetaFactor from_moments(const Vec& mean, const Mat& cov);

  int dim() const { return static_cast<int>(mu_.size()); }
  bool diagonal() const { return diagonal_; }
  std::size_t param_count() const;

  Vec pack() const;
  void unpack(const Vec& packed);
  void apply_update(const Vec& delta);

  const Vec& mu() const { return mu_; }
  Vec diag_scale() const;
  Mat scale_matrix() const;
  Vec marginal_std() const;

  Vec sample(const Vec& eps) const;  // mu + L eps
  double logpdf(const Vec& theta) const;
  Vec dlogpdf_dtheta(const Vec& theta) const;

  // d(-log q)/dtheta evaluated at theta = mu + L eps; equals L^{-T} eps.
  Vec entropy_grad_at_sample(const Vec& eps) const;

  // Packed parameter gradient of <dtheta, theta(params)> at fixed eps.
  Vec chain_to_params(const Vec& dtheta, const Vec& eps) const;

 private:
  bool diagonal_ = true;
  Vec mu_;
  Vec diag_raw_;
  Vec lower_;  // strictly-lower entries, rows in order (1,0), (2,0), (2,1), ...

  std::size_t lower_index(int a, int b) const;  // a > b
};

// Mean-field q(z) = N(mu, diag sigma^2); packs as [mu | sigma_raw].
class MeanFieldAux {
 public:
  MeanFieldAux() = default;
  MeanFieldAux(std::size_t n, double mu0, double sigma0);

  std::size_t n() const { return mu_.size(); }
  std::size_t param_count() const { return 2 * mu_.size(); }

  Vec pack() const;
  void unpack(const Vec& packed);
  void apply_update(const Vec& delta);

  const Vec& mu() const { return mu_; }
  Vec sigma() const;

  Vec sample(const Vec& tau) const;
  double logpdf(const Vec& z) const;
  Vec dlogpdf_dz(const Vec& z) const;

  // STL parameter gradient: only the sample path, w = dL/dz.
  Vec chain_to_params(const Vec& w, const Vec& tau) const;

 private:
  Vec mu_;
  Vec sigma_raw_;
};

// Amortized q(z | theta): a shared net maps per-row inputs (predictor [, y])
// to a mean head and a pre-softplus scale head.
class AmortizedAux {
 public:
  AmortizedAux() = default;
  AmortizedAux(const MlpSpec& spec, bool takes_y, RngStream& init_stream);

  bool takes_y() const { return takes_y_; }
  const MlpParams& net() const { return net_; }
  MlpParams& net() { return net_; }
  std::size_t param_count() const { return net_.param_count(); }

  Vec pack() const { return net_.flatten(); }
  void unpack(const Vec& packed) { net_.unflatten(packed); }
  void apply_update(const Vec& delta);

  struct Eval {
    Mat inputs;
    ForwardTape tape;
    Vec mu;
    Vec sraw;
    Vec sigma;
  };

  Eval eval(const Vec& pred, const Vec* y) const;
  Vec sample(const Eval& e, const Vec& tau) const;
  double logpdf(const Eval& e, const Vec& z) const;

  struct Backprop {
    Vec dpsi;   // net parameter gradient (sample path only, per STL)
    Vec dpred;  // gradient through the conditioning inputs (both paths)
  };
  // w = dL/dz upstream for the sample path; tau identifies the sample.
  Backprop backward(const Eval& e, const Vec& w, const Vec& tau) const;

 private:
  MlpParams net_;
  bool takes_y_ = false;
};

using AuxFactor = std::variant<MeanFieldAux, AmortizedAux>;

struct ClientFactors {
  ThetaFactor theta;
  AuxFactor aux;

  bool amortized() const { return std::holds_alternative<AmortizedAux>(aux); }
};

std::size_t aux_param_count(const AuxFactor& aux);
Vec aux_pack(const AuxFactor& aux);
void aux_apply_update(AuxFactor& aux, const Vec& delta);

}  // namespace vfl
