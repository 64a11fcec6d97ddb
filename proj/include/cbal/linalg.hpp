#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cbal {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  /// Appends a row; the first append on an empty 0x0 matrix fixes the width.
  void append_row(std::span<const double> values);
  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  Matrix select_rows(std::span<const std::size_t> indices) const;
  Matrix select_cols(std::span<const std::size_t> indices) const;
  std::vector<double> column(std::size_t c) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);

/// XᵀX of the design matrix [1 | X]; index 0 is the intercept.
Matrix gram_with_intercept(const Matrix& x);
/// Xᵀy of the design matrix [1 | X].
std::vector<double> cross_with_intercept(const Matrix& x, std::span<const double> y);

/// In-place lower Cholesky factor of a symmetric matrix. Returns false when a
/// pivot falls below rel_tol times the largest diagonal entry.
bool cholesky_decompose(Matrix& a, double rel_tol = 1e-13);
std::vector<double> cholesky_solve(const Matrix& lower, std::span<const double> b);
/// Inverse of the original matrix from its Cholesky factor.
Matrix cholesky_inverse(const Matrix& lower);

/// Conjugate gradient on a symmetric positive semi-definite system.
std::vector<double> conjugate_gradient(const Matrix& a, std::span<const double> b,
                                       double tol = 1e-12, std::size_t max_iter = 0);

std::vector<double> mat_vec(const Matrix& a, std::span<const double> x);

}  // namespace cbal
