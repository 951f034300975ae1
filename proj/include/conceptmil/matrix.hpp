#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace conceptmil {

// Dense row-major matrix of doubles. Treated as an immutable value once an
// operation has produced it; in-place mutation is reserved for parameter
// updates between training steps.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix row(std::vector<double> values);
  static Matrix column(std::vector<double> values);
  static Matrix identity(std::size_t n);
  static Matrix filled(std::size_t rows, std::size_t cols, double value);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }

  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row_span(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  std::string shape_str() const;

  bool all_finite() const;
  // Throws NumericError naming `context` if any entry is not finite.
  void require_finite(const char* context) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (non-differentiable) helpers shared by data loading and tests.
double row_norm(const Matrix& m, std::size_t r);
Matrix normalized_rows(const Matrix& m);  // throws DegenerateInputError on a zero row

}  // namespace conceptmil
