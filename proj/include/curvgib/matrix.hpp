#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "curvgib/error.hpp"

namespace curvgib {

/// Dense row-major matrix of doubles. Value type; the autodiff tape stores
/// these for activations and gradients.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw UsageError("Matrix: data length " + std::to_string(data_.size()) +
                       " does not match shape " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Matrix column(std::vector<double> v) {
    const auto n = v.size();
    return Matrix(n, 1, std::move(v));
  }
  static Matrix scalar(double v) { return Matrix(1, 1, v); }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
  [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  [[nodiscard]] bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  [[nodiscard]] std::string shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Compressed-sparse-row matrix. Used for constant operators such as the
/// Laplacian mass matrix that multiply tape values from the left.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;  // rows + 1 entries
  std::vector<std::size_t> indices;
  std::vector<double> values;

  [[nodiscard]] std::size_t nnz() const noexcept { return values.size(); }

  [[nodiscard]] double at(std::size_t r, std::size_t c) const noexcept {
    for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
      if (indices[k] == c) return values[k];
    }
    return 0.0;
  }

  [[nodiscard]] Matrix to_dense() const {
    Matrix d(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) d(r, indices[k]) += values[k];
    }
    return d;
  }

  // y = S x
  [[nodiscard]] Matrix multiply(const Matrix& x) const {
    if (x.rows() != cols) {
      throw UsageError("SparseMatrix::multiply: shape mismatch " + std::to_string(rows) + "x" +
                       std::to_string(cols) + " * " + x.shape_str());
    }
    Matrix y(rows, x.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      auto out = y.row(r);
      for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
        const double w = values[k];
        const auto in = x.row(indices[k]);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * in[c];
      }
    }
    return y;
  }

  // y = S^T x
  [[nodiscard]] Matrix multiply_transposed(const Matrix& x) const {
    if (x.rows() != rows) {
      throw UsageError("SparseMatrix::multiply_transposed: shape mismatch");
    }
    Matrix y(cols, x.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      const auto in = x.row(r);
      for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) {
        const double w = values[k];
        auto out = y.row(indices[k]);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * in[c];
      }
    }
    return y;
  }
};

}  // namespace curvgib
