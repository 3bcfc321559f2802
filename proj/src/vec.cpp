#include "vfl/vec.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace vfl {

void check_same_dim(const Vec& a, const Vec& b, const char* what) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(what) + ": dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
}

void check_finite(const Vec& v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(what) + ": non-finite entry at index " + std::to_string(i));
    }
  }
}

void check_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

Vec add(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "add");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

Vec sub(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "sub");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

Vec mul(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "mul");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * b[i];
  return r;
}

Vec scale(const Vec& a, double s) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] * s;
  return r;
}

void axpy(double a, const Vec& x, Vec& y) {
  check_same_dim(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double dot(const Vec& a, const Vec& b) {
  check_same_dim(a, b, "dot");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double sum(const Vec& a) {
  double s = 0;
  for (double v : a) s += v;
  return s;
}

double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const Vec& a) {
  double m = 0;
  for (double v : a) m = std::max(m, std::fabs(v));
  return m;
}

Vec constant(std::size_t n, double v) { return Vec(n, v); }

void add_in_place(Vec& v, const Vec& a) {
  check_same_dim(v, a, "add_in_place");
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += a[i];
}

Vec matvec(const Mat& m, const Vec& x) {
  if (m.cols != x.size()) {
    throw ShapeError("matvec: " + std::to_string(m.cols) + " cols vs vec " +
                     std::to_string(x.size()));
  }
  Vec r(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.row_ptr(i);
    double s = 0;
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * x[j];
    r[i] = s;
  }
  return r;
}

Vec matvec_t(const Mat& m, const Vec& x) {
  if (m.rows != x.size()) {
    throw ShapeError("matvec_t: " + std::to_string(m.rows) + " rows vs vec " +
                     std::to_string(x.size()));
  }
  Vec r(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double* row = m.row_ptr(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < m.cols; ++j) r[j] += row[j] * xi;
  }
  return r;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ShapeError("matmul: inner dims disagree");
  Mat c(a.rows, b.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row_ptr(k);
      double* crow = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

Mat identity(std::size_t n) {
  Mat m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat hcat(const std::vector<Mat>& blocks) {
  if (blocks.empty()) return {};
  std::size_t rows = blocks[0].rows;
  std::size_t cols = 0;
  for (const Mat& b : blocks) {
    if (b.rows != rows) throw ShapeError("hcat: row counts disagree");
    cols += b.cols;
  }
  Mat out(rows, cols);
  std::size_t at = 0;
  for (const Mat& b : blocks) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < b.cols; ++j) out(i, at + j) = b(i, j);
    at += b.cols;
  }
  return out;
}

Mat cholesky(const Mat& a) {
  if (a.rows != a.cols) throw ShapeError("cholesky: matrix not square");
  const std::size_t n = a.rows;
  Mat l(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (s <= 0.0) throw DomainError("cholesky: matrix not positive definite");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

Vec solve_lower(const Mat& l, const Vec& b) {
  if (l.rows != b.size()) throw ShapeError("solve_lower: dims disagree");
  const std::size_t n = l.rows;
  Vec y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
    y[i] = s / l(i, i);
  }
  return y;
}

Vec solve_upper_t(const Mat& l, const Vec& b) {
  if (l.rows != b.size()) throw ShapeError("solve_upper_t: dims disagree");
  const std::size_t n = l.rows;
  Vec y(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * y[k];
    y[ii] = s / l(ii, ii);
  }
  return y;
}

Vec chol_solve(const Mat& l, const Vec& b) { return solve_upper_t(l, solve_lower(l, b)); }

Mat chol_inverse(const Mat& l) {
  const std::size_t n = l.rows;
  Mat inv(n, n);
  Vec e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    Vec col = chol_solve(l, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    e[j] = 0.0;
  }
  return inv;
}

double log1p_exp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double softplus(double x) { return log1p_exp(x); }

double softplus_prime(double x) { return sigmoid(x); }

double softplus_inv(double y) {
  if (y <= 0.0) throw DomainError("softplus_inv: argument must be positive");
  if (y > 35.0) return y;
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace vfl
