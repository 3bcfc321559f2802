#pragma once

#include <cstddef>
#include <vector>

#include "vfl/errors.hpp"

namespace vfl {

using Vec = std::vector<double>;

// Dense row-major matrix.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  const double* row_ptr(std::size_t i) const { return data.data() + i * cols; }
  double* row_ptr(std::size_t i) { return data.data() + i * cols; }
};

void check_same_dim(const Vec& a, const Vec& b, const char* what);
void check_finite(const Vec& v, const char* what);
void check_finite(double x, const char* what);

// Elementwise arithmetic; every binary op checks dimensions.
Vec add(const Vec& a, const Vec& b);
Vec sub(const Vec& a, const Vec& b);
Vec mul(const Vec& a, const Vec& b);
Vec scale(const Vec& a, double s);
void axpy(double a, const Vec& x, Vec& y);  // y += a*x
double dot(const Vec& a, const Vec& b);
double sum(const Vec& a);
double norm2(const Vec& a);
double norm_inf(const Vec& a);
Vec constant(std::size_t n, double v);

// v += a (elementwise, in place)
void add_in_place(Vec& v, const Vec& a);

Vec matvec(const Mat& m, const Vec& x);          // m * x
Vec matvec_t(const Mat& m, const Vec& x);        // m^T * x
Mat matmul(const Mat& a, const Mat& b);
Mat transpose(const Mat& m);
Mat identity(std::size_t n);

// Horizontal concatenation of equal-height blocks.
Mat hcat(const std::vector<Mat>& blocks);

// Cholesky factor L (lower) of a symmetric positive-definite matrix.
Mat cholesky(const Mat& a);
Vec solve_lower(const Mat& l, const Vec& b);     // L y = b
Vec solve_upper_t(const Mat& l, const Vec& b);   // L^T y = b
Vec chol_solve(const Mat& l, const Vec& b);      // (L L^T) y = b
Mat chol_inverse(const Mat& l);                  // (L L^T)^-1

// Numerically stable softplus and friends (used for positivity constraints).
double softplus(double x);
double softplus_prime(double x);   // = sigmoid(x)
double softplus_inv(double y);     // y > 0
double sigmoid(double x);
double log1p_exp(double x);        // log(1 + e^x)

}  // namespace vfl
