// Copyright 2026 The ctcprune Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ctcprune {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v);
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_string() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// Batch-major rank-3 array: element (b, r, c) at (b * rows + r) * cols + c.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t batch, std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t batch() const { return batch_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t b, std::size_t r, std::size_t c) {
    return data_[(b * rows_ + r) * cols_ + c];
  }
  double operator()(std::size_t b, std::size_t r, std::size_t c) const {
    return data_[(b * rows_ + r) * cols_ + c];
  }

  Matrix slice(std::size_t b) const;
  void set_slice(std::size_t b, const Matrix& m);

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t batch_ = 0;
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Products. Dimension mismatches throw ConfigError naming both shapes.
Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b without materializing the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ without materializing the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

double frobenius_norm(const Matrix& a);
bool all_finite(const Matrix& a);

/// Copies columns [begin, begin + count).
Matrix columns(const Matrix& a, std::size_t begin, std::size_t count);
/// Stacks matrices with identical column counts vertically.
Matrix vstack(std::span<const Matrix> parts);

struct SvdResult {
  Matrix u;               // rows × k, orthonormal columns
  std::vector<double> s;  // k values, non-increasing
  Matrix vt;              // k × cols, orthonormal rows
};

inline constexpr int kSvdMaxSweeps = 60;
inline constexpr double kSvdTolerance = 1e-12;

/// Thin SVD by one-sided Jacobi rotations, k = min(rows, cols).
/// Throws NumericError when kSvdMaxSweeps sweeps do not converge.
SvdResult svd(const Matrix& a);

/// Numerically stable log-softmax of one row.
std::vector<double> log_softmax(std::span<const double> row);
double log_sum_exp(std::span<const double> values);
/// log(exp(a) + exp(b)), tolerating -inf operands.
double log_add(double a, double b);

// PMAT binary format: "PMAT", u32 version, u64 rows, u64 cols, then
// rows*cols little-endian doubles in row-major order.
inline constexpr std::uint32_t kMatrixFormatVersion = 1;

void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void save_matrix(const std::string& path, const Matrix& m);
Matrix load_matrix(const std::string& path);

}  // namespace ctcprune
