#pragma once

#include <functional>

#include "vfl/dataset.hpp"
#include "vfl/model.hpp"
#include "vfl/vec.hpp"

namespace vfl {

struct GaussianPosterior {
  Vec mean;
  Mat cov;
  Vec marginal_std() const;
};

// Exact theta-marginal of the augmented linear-Gaussian model, obtained by
// integrating z out: y | theta ~ N(sum_j x_j beta_j, sqrt(sigma^2 + J rho^2)),
// then conjugate Gaussian algebra. rho = 0 gives the original posterior.
GaussianPosterior marginalized_posterior_linear(const Dataset& data,
                                                const std::vector<PriorSpec>& priors, double sigma,
                                                double rho);

// Log marginal likelihood of the linear-Gaussian model with Gaussian priors,
// evaluated with the p-dimensional determinant lemma.
double linear_evidence(const Dataset& data, const std::vector<PriorSpec>& priors, double sigma,
                       double rho);

// Trapezoid-rule posterior for models with at most two free parameters.
struct GridPosterior {
  Vec mean;
  Mat cov;
  double log_norm = 0.0;      // log of the integral of the unnormalized density
  double refine_delta = 0.0;  // relative change of the integral when the grid is halved
};

GridPosterior grid_posterior(const std::function<double(const Vec&)>& log_unnorm, const Vec& lo,
                             const Vec& hi, int points_per_dim);

}  // namespace vfl
