#pragma once

#include <cmath>
#include <functional>

#include "vfl/vec.hpp"

// Central finite differences and error metrics shared by the test suites.
namespace testsupport {

using vfl::Vec;

inline Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x,
                        double h = 1e-5) {
  Vec g(x.size());
  Vec xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::fabs(x[i]));
    xp[i] = x[i] + step;
    const double fp = f(xp);
    xp[i] = x[i] - step;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

// Relative error between gradient vectors: ||a - b|| / max(||b||, floor).
inline double rel_err(const Vec& a, const Vec& b, double floor = 1e-8) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::fabs(a - b) / std::max(std::fabs(b), floor);
}

}  // namespace testsupport
