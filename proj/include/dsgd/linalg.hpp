#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dsgd {

using Vector = std::vector<double>;

/// Dense row-major matrix. Node states use one row per node.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix multiply(const Matrix& a, const Matrix& b);

/// Mean over rows (the average node state).
Vector row_mean(const Matrix& x);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double frobenius_sq(const Matrix& a);

bool is_symmetric(const Matrix& a, double tol);

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // column k pairs with values[k]
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops
/// below `tol` (absolute). Throws UnsupportedMatrixError if `a` is not
/// symmetric within 1e-12.
SymmetricEigen symmetric_eigen(const Matrix& a, double tol = 1e-12);
Vector symmetric_eigenvalues(const Matrix& a, double tol = 1e-12);

}  // namespace dsgd
