#include "vfl/gaussian.hpp"

#include <cmath>
#include <string>

namespace vfl {

namespace {

inline void check_scale(double s) {
  if (!(s > 0.0)) throw DomainError("gaussian: scale must be positive");
}

}  // namespace

double gaussian_logpdf(const Vec& x, const Vec& mean, const Vec& scale) {
  check_same_dim(x, mean, "gaussian_logpdf");
  check_same_dim(x, scale, "gaussian_logpdf scale");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    check_scale(scale[i]);
    const double r = (x[i] - mean[i]) / scale[i];
    total += -0.5 * kLogTwoPi - std::log(scale[i]) - 0.5 * r * r;
  }
  return total;
}

double gaussian_logpdf(const Vec& x, const Vec& mean, double scale) {
  check_same_dim(x, mean, "gaussian_logpdf");
  check_scale(scale);
  const double log_s = std::log(scale);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = (x[i] - mean[i]) / scale;
    total += -0.5 * kLogTwoPi - log_s - 0.5 * r * r;
  }
  return total;
}

GaussianGrads gaussian_logpdf_grads(const Vec& x, const Vec& mean, const Vec& scale) {
  check_same_dim(x, mean, "gaussian_logpdf_grads");
  check_same_dim(x, scale, "gaussian_logpdf_grads scale");
  GaussianGrads g;
  g.dx.resize(x.size());
  g.dmean.resize(x.size());
  g.dscale.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    check_scale(scale[i]);
    const double s = scale[i];
    const double d = x[i] - mean[i];
    g.dmean[i] = d / (s * s);
    g.dx[i] = -g.dmean[i];
    g.dscale[i] = d * d / (s * s * s) - 1.0 / s;
  }
  return g;
}

GaussianGrads gaussian_logpdf_grads(const Vec& x, const Vec& mean, double scale) {
  check_same_dim(x, mean, "gaussian_logpdf_grads");
  check_scale(scale);
  GaussianGrads g;
  g.dx.resize(x.size());
  g.dmean.resize(x.size());
  const double s2 = scale * scale;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    g.dmean[i] = d / s2;
    g.dx[i] = -g.dmean[i];
    g.dscale_scalar += d * d / (s2 * scale) - 1.0 / scale;
  }
  return g;
}

double gaussian_logpdf1(double x, double mean, double scale) {
  check_scale(scale);
  const double r = (x - mean) / scale;
  return -0.5 * kLogTwoPi - std::log(scale) - 0.5 * r * r;
}

double half_normal_logpdf(double y, double s) {
  if (!(y > 0.0)) throw DomainError("half_normal_logpdf: support is y > 0");
  check_scale(s);
  return std::log(2.0) + gaussian_logpdf1(y, 0.0, s);
}

}  // namespace vfl
