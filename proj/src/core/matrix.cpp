// SPDX-License-Identifier: Apache-2.0
#include "shiftlab/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shiftlab/kernels.hpp"

namespace shiftlab {
namespace {

std::string shape_str(const Matrix &m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto &r : rows) {
    if (r.size() != cols_)
      throw ShapeError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul: " + shape_str(a) + " * " + shape_str(b));
  Matrix c(a.rows(), b.cols());
  const auto &k = kernels::active();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double *out = c.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s != 0.0)
        k.axpy(s, b.row(p).data(), out, b.cols());
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
  if (a.rows() != b.rows())
    throw ShapeError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  Matrix c(a.cols(), b.cols());
  const auto &k = kernels::active();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double *brow = b.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s != 0.0)
        k.axpy(s, brow, c.row(p).data(), b.cols());
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) +
                     "^T");
  Matrix c(a.rows(), b.rows());
  const auto &k = kernels::active();
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j)
      c(i, j) = k.dot(a.row(i).data(), b.row(j).data(), a.cols());
  return c;
}

Matrix transpose(const Matrix &a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      t(j, i) = a(i, j);
  return t;
}

Matrix operator+(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b))
    throw ShapeError("add: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  kernels::axpy(1.0, b.data().data(), c.data().data(), c.size());
  return c;
}

Matrix operator-(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b))
    throw ShapeError("sub: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  kernels::axpy(-1.0, b.data().data(), c.data().data(), c.size());
  return c;
}

Matrix operator*(double s, const Matrix &a) {
  Matrix c = a;
  for (double &v : c.data())
    v *= s;
  return c;
}

void add_row_vector(Matrix &m, std::span<const double> bias) {
  if (bias.size() != m.cols())
    throw ShapeError("add_row_vector: bias length " +
                     std::to_string(bias.size()) + " vs " + shape_str(m));
  for (std::size_t i = 0; i < m.rows(); ++i)
    kernels::axpy(1.0, bias.data(), m.row(i).data(), m.cols());
}

Vector column_sums(const Matrix &m) {
  Vector s(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    kernels::axpy(1.0, m.row(i).data(), s.data(), m.cols());
  return s;
}

std::vector<int> argmax_rows(const Matrix &m) {
  std::vector<int> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double norm2(std::span<const double> v) {
  return std::sqrt(kernels::dot(v.data(), v.data(), v.size()));
}

double frobenius_norm(const Matrix &m) { return norm2(m.data()); }

Matrix gather_rows(const Matrix &m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = m.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

} // namespace shiftlab
