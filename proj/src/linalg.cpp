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

#include "ctcprune/linalg.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "ctcprune/error.hpp"
#include "ctcprune/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace ctcprune {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ConfigError(fmt::format("matrix data length {} does not match shape {}x{}",
                                  data_.size(), rows, cols));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ConfigError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Matrix::shape_string() const { return fmt::format("{}x{}", rows_, cols_); }

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) {
    throw ConfigError(fmt::format("cannot add {} and {}", shape_string(), other.shape_string()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (!same_shape(other)) {
    throw ConfigError(
        fmt::format("cannot subtract {} and {}", shape_string(), other.shape_string()));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }

Tensor3::Tensor3(std::size_t batch, std::size_t rows, std::size_t cols, double fill)
    : batch_(batch), rows_(rows), cols_(cols), data_(batch * rows * cols, fill) {}

Matrix Tensor3::slice(std::size_t b) const {
  const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(b * rows_ * cols_);
  return Matrix(rows_, cols_,
                std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(rows_ * cols_)));
}

void Tensor3::set_slice(std::size_t b, const Matrix& m) {
  if (m.rows() != rows_ || m.cols() != cols_) {
    throw ConfigError(fmt::format("slice shape {} does not fit tensor {}x{}x{}",
                                  m.shape_string(), batch_, rows_, cols_));
  }
  std::copy(m.data().begin(), m.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(b * rows_ * cols_));
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ConfigError(
        fmt::format("matmul dimension mismatch: {} x {}", a.shape_string(), b.shape_string()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ConfigError(fmt::format("matmul_tn dimension mismatch: {}ᵀ x {}", a.shape_string(),
                                  b.shape_string()));
  }
  const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
  Matrix out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = pa + p * n;
    const double* brow = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* orow = po + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ConfigError(fmt::format("matmul_nt dimension mismatch: {} x {}ᵀ", a.shape_string(),
                                  b.shape_string()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Matrix out(n, m);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      po[i * m + j] = acc;
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const Matrix& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

bool all_finite(const Matrix& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

Matrix columns(const Matrix& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) {
    throw ConfigError(fmt::format("column range [{}, {}) outside {}", begin, begin + count,
                                  a.shape_string()));
  }
  Matrix out(a.rows(), count);
  for (std::size_t i = 0; i < a.rows(); ++i)
    std::copy_n(a.row(i).begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(i).begin());
  return out;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw ConfigError(fmt::format("vstack column mismatch: {} vs {}", p.cols(), cols));
    }
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Matrix(rows, cols, std::move(data));
}

namespace {

// One-sided Jacobi on the columns of `work` (m × n, m ≥ n). On return the
// columns of `work` are mutually orthogonal and `v` holds the accumulated
// rotations, so that a = work · vᵀ.
void jacobi_orthogonalize(Matrix& work, Matrix& v) {
  const std::size_t m = work.rows(), n = work.cols();
  // Column-major copies keep the inner loops contiguous.
  std::vector<std::vector<double>> col(n, std::vector<double>(m));
  std::vector<std::vector<double>> vcol(n, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) col[j][i] = work(i, j);
    vcol[j][j] = 1.0;
  }

  bool converged = n < 2;
  for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto& cp = col[p];
        auto& cq = col[q];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = cp[i], y = cq[i];
          cp[i] = c * x - s * y;
          cq[i] = s * x + c * y;
        }
        auto& vp = vcol[p];
        auto& vq = vcol[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
  }
  if (!converged) {
    throw NumericError(
        fmt::format("svd did not converge within the {} sweep iteration cap", kSvdMaxSweeps));
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) work(i, j) = col[j][i];
    for (std::size_t i = 0; i < n; ++i) v(i, j) = vcol[j][i];
  }
}

// Replaces columns flagged in `fill` by unit vectors orthogonal to all others.
void complete_orthonormal_columns(Matrix& u, const std::vector<bool>& fill) {
  const std::size_t m = u.rows(), k = u.cols();
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < k; ++j) {
    if (!fill[j]) continue;
    for (; candidate < m; ++candidate) {
      std::vector<double> e(m, 0.0);
      e[candidate] = 1.0;
      // Two Gram-Schmidt passes against every accepted column.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < k; ++o) {
          if (o == j || (fill[o] && o > j)) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += u(i, o) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= dot * u(i, o);
        }
      }
      double norm = 0.0;
      for (double x : e) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t i = 0; i < m; ++i) u(i, j) = e[i] / norm;
        ++candidate;
        break;
      }
    }
  }
}

SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Matrix work = a;
  Matrix v(n, n);
  jacobi_orthogonalize(work, v);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += work(i, j) * work(i, j);
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult r;
  r.u = Matrix(m, n);
  r.s.resize(n);
  r.vt = Matrix(n, n);
  const double scale = norms.empty() ? 0.0 : norms[order.front()];
  std::vector<bool> fill(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.s[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) r.vt(k, i) = v(i, j);
    // Columns with negligible norm carry no direction; complete them below.
    if (norms[j] == 0.0 || norms[j] <= 1e-300 || norms[j] < scale * 1e-15) {
      fill[k] = true;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) r.u(i, k) = work(i, j) / norms[j];
  }
  if (std::find(fill.begin(), fill.end(), true) != fill.end()) {
    complete_orthonormal_columns(r.u, fill);
  }
  return r;
}

}  // namespace

SvdResult svd(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw ConfigError("svd of an empty matrix");
  if (!all_finite(a)) throw NumericError("svd input contains non-finite values");
  if (a.rows() >= a.cols()) return svd_tall(a);
  SvdResult t = svd_tall(transpose(a));
  return SvdResult{transpose(t.vt), std::move(t.s), transpose(t.u)};
}

double log_sum_exp(std::span<const double> values) {
  double max = -std::numeric_limits<double>::infinity();
  for (double v : values) max = std::max(max, v);
  if (!std::isfinite(max)) return max;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - max);
  return max + std::log(acc);
}

double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

std::vector<double> log_softmax(std::span<const double> row) {
  std::vector<double> out(row.begin(), row.end());
  if (out.empty()) return out;
  const double lse = log_sum_exp(row);
  for (double& v : out) v -= lse;
  return out;
}

namespace {

constexpr char kMatrixMagic[4] = {'P', 'M', 'A', 'T'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(fmt::format("truncated matrix record while reading {}", what));
  return v;
}

}  // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
  out.write(kMatrixMagic, 4);
  write_pod(out, kMatrixFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(m.rows()));
  write_pod(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data().data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix read_matrix(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in) throw DataError("truncated matrix record while reading magic");
  if (std::memcmp(magic, kMatrixMagic, 4) != 0) throw DataError("bad magic in matrix record");
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kMatrixFormatVersion) {
    throw DataError(fmt::format("unsupported matrix format version {}", version));
  }
  const auto rows = read_pod<std::uint64_t>(in, "rows");
  const auto cols = read_pod<std::uint64_t>(in, "cols");
  if (cols != 0 && rows > (std::uint64_t{1} << 40) / cols) {
    throw DataError(fmt::format("implausible matrix shape {}x{}", rows, cols));
  }
  std::vector<double> data(rows * cols);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw DataError("truncated matrix record while reading values");
  return Matrix(rows, cols, std::move(data));
}

void save_matrix(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  write_matrix(out, m);
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

Matrix load_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  return read_matrix(in);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng rng_fork(std::uint64_t seed, std::string_view stream_label) {
  // splitmix64 finalizer over (seed, label hash).
  std::uint64_t z = seed ^ fnv1a64(stream_label);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return Rng(z);
}

}  // namespace ctcprune
