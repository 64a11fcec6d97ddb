#include "cbal/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "cbal/error.hpp"

namespace cbal {

void Matrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw SchemaError("row width " + std::to_string(values.size()) +
                      " does not match matrix width " + std::to_string(cols_));
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix Matrix::select_cols(std::span<const std::size_t> indices) const {
  Matrix out(rows_, indices.size());
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t j = 0; j < indices.size(); ++j) out(r, j) = (*this)(r, indices[j]);
  }
  return out;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Matrix gram_with_intercept(const Matrix& x) {
  const std::size_t d = x.cols() + 1;
  Matrix g(d, d);
  std::vector<double> aug(d);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    aug[0] = 1.0;
    auto src = x.row(r);
    std::copy(src.begin(), src.end(), aug.begin() + 1);
    for (std::size_t i = 0; i < d; ++i) {
      const double ai = aug[i];
      double* gi = &g(i, 0);
      for (std::size_t j = 0; j <= i; ++j) gi[j] += ai * aug[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i + 1; j < d; ++j) g(i, j) = g(j, i);
  }
  return g;
}

std::vector<double> cross_with_intercept(const Matrix& x, std::span<const double> y) {
  std::vector<double> out(x.cols() + 1, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out[0] += y[r];
    auto src = x.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) out[j + 1] += src[j] * y[r];
  }
  return out;
}

bool cholesky_decompose(Matrix& a, double rel_tol) {
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::fabs(a(i, i)));
  const double floor = rel_tol * std::max(max_diag, 1e-300);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= a(j, k) * a(j, k);
    if (!(diag > floor)) return false;
    const double ljj = std::sqrt(diag);
    a(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
  }
  return true;
}

std::vector<double> cholesky_solve(const Matrix& lower, std::span<const double> b) {
  const std::size_t n = lower.rows();
  std::vector<double> z(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = z[i];
    for (std::size_t k = 0; k < i; ++k) s -= lower(i, k) * z[k];
    z[i] = s / lower(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = z[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= lower(k, i) * z[k];
    z[i] = s / lower(i, i);
  }
  return z;
}

Matrix cholesky_inverse(const Matrix& lower) {
  const std::size_t n = lower.rows();
  Matrix inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    std::fill(e.begin(), e.end(), 0.0);
    e[c] = 1.0;
    auto col = cholesky_solve(lower, e);
    for (std::size_t r = 0; r < n; ++r) inv(r, c) = col[r];
  }
  return inv;
}

std::vector<double> mat_vec(const Matrix& a, std::span<const double> x) {
  std::vector<double> out(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) out[r] = dot(a.row(r), x);
  return out;
}

std::vector<double> conjugate_gradient(const Matrix& a, std::span<const double> b,
                                       double tol, std::size_t max_iter) {
  const std::size_t n = b.size();
  if (max_iter == 0) max_iter = 10 * n + 100;
  std::vector<double> x(n, 0.0);
  std::vector<double> r(b.begin(), b.end());
  std::vector<double> p = r;
  double rs = dot(r, r);
  const double stop = tol * tol * std::max(dot(b, b), 1e-300);
  for (std::size_t it = 0; it < max_iter && rs > stop; ++it) {
    auto ap = mat_vec(a, p);
    const double pap = dot(p, ap);
    if (!(pap > 0.0)) break;
    const double alpha = rs / pap;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
    }
    const double rs_next = dot(r, r);
    const double beta = rs_next / rs;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
    rs = rs_next;
  }
  return x;
}

}  // namespace cbal
