#pragma once

#include "vfl/vec.hpp"

namespace vfl {

inline constexpr double kLogTwoPi = 1.8378770664093454836;

// Sum over components of log N(x_i; mean_i, scale_i^2). scale holds standard
// deviations, either one per component or a single shared value.
double gaussian_logpdf(const Vec& x, const Vec& mean, const Vec& scale);
double gaussian_logpdf(const Vec& x, const Vec& mean, double scale);

struct GaussianGrads {
  Vec dx;
  Vec dmean;
  Vec dscale;  // per-component; for the shared-scale overload see dscale_scalar
  double dscale_scalar = 0.0;
};

GaussianGrads gaussian_logpdf_grads(const Vec& x, const Vec& mean, const Vec& scale);
GaussianGrads gaussian_logpdf_grads(const Vec& x, const Vec& mean, double scale);

// Scalar convenience forms.
double gaussian_logpdf1(double x, double mean, double scale);

// log of the half-normal HN(s) density at y > 0 (natural scale).
double half_normal_logpdf(double y, double s);

}  // namespace vfl
