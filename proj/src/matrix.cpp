#include "conceptmil/matrix.hpp"

#include <cmath>
#include <stdexcept>

#include "conceptmil/errors.hpp"

namespace conceptmil {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
  }
}

Matrix Matrix::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(1, n, std::move(values));
}

Matrix Matrix::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Matrix(n, 1, std::move(values));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::filled(std::size_t rows, std::size_t cols, double value) {
  Matrix m(rows, cols);
  for (auto& v : m.data()) v = value;
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Matrix::require_finite(const char* context) const {
  if (!all_finite()) {
    throw NumericError(std::string(context) + ": non-finite value in " +
                       shape_str() + " matrix");
  }
}

double row_norm(const Matrix& m, std::size_t r) {
  double sq = 0.0;
  for (double v : m.row_span(r)) sq += v * v;
  return std::sqrt(sq);
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double norm = row_norm(m, r);
    if (norm == 0.0) {
      throw DegenerateInputError("cannot normalize zero row " + std::to_string(r));
    }
    for (double& v : out.row_span(r)) v /= norm;
  }
  return out;
}

}  // namespace conceptmil
