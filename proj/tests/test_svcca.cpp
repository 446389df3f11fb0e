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

#include <cmath>
#include <filesystem>
#include <fstream>

#include <doctest.h>

#include "ctcprune/error.hpp"
#include "ctcprune/svcca.hpp"
#include "test_util.hpp"

using namespace ctcprune;
using namespace ctcprune::svcca;
using ctcprune::testing::random_matrix;

namespace {

Matrix centre(const Matrix& x) {
  Matrix c = x;
  for (std::size_t j = 0; j < c.cols(); ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < c.rows(); ++i) m += c(i, j);
    m /= static_cast<double>(c.rows());
    for (std::size_t i = 0; i < c.rows(); ++i) c(i, j) -= m;
  }
  return c;
}

// Lower Cholesky factor of a symmetric positive definite matrix.
Matrix cholesky(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

// Rows of X solved against Lᵀ: returns X · L⁻ᵀ.
Matrix whiten(const Matrix& x, const Matrix& l) {
  Matrix w(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double s = x(r, j);
      for (std::size_t k = 0; k < j; ++k) s -= w(r, k) * l(j, k);
      w(r, j) = s / l(j, j);
    }
  return w;
}

// Textbook CCA through covariance Cholesky whitening, valid when every
// direction is retained.
double cholesky_cca_mean(const Matrix& x, const Matrix& y) {
  const Matrix xc = centre(x), yc = centre(y);
  const Matrix wx = whiten(xc, cholesky(matmul_tn(xc, xc)));
  const Matrix wy = whiten(yc, cholesky(matmul_tn(yc, yc)));
  const SvdResult r = svd(matmul_tn(wx, wy));
  double sum = 0.0;
  for (double s : r.s) sum += std::min(s, 1.0);
  return sum / static_cast<double>(r.s.size());
}

Matrix random_orthogonal(std::size_t d, Rng& rng) { return svd(random_matrix(d, d, rng)).u; }

// Q1 · diag(1..cond) · Q2, condition number exactly `cond`.
Matrix conditioned(std::size_t d, double cond, Rng& rng) {
  Matrix s(d, d);
  for (std::size_t i = 0; i < d; ++i)
    s(i, i) = 1.0 + (cond - 1.0) * static_cast<double>(i) / static_cast<double>(d - 1);
  return matmul(matmul(random_orthogonal(d, rng), s), random_orthogonal(d, rng));
}

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.layers = 3;
  c.d_model = 4;
  c.d_ff = 8;
  c.heads = 2;
  c.vocab = 3;
  c.input_dim = 4;
  c.taps = {1};
  c.inter_weight = 0.5;
  return c;
}

}  // namespace

TEST_CASE("self similarity is one") {
  Rng rng = rng_fork(1, "self");
  const Matrix x = random_matrix(400, 12, rng);
  CHECK(std::abs(svcca_similarity(x, x) - 1.0) < 1e-8);
}

TEST_CASE("invariance to invertible linear maps") {
  Rng rng = rng_fork(2, "inv");
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = random_matrix(600, 16, rng);
    const Matrix m = conditioned(16, 90.0, rng);
    const double s = svcca_similarity(x, matmul(x, m));
    CHECK(s >= 1.0 - 1e-6);
  }
}

TEST_CASE("invariance to orthogonal maps") {
  Rng rng = rng_fork(3, "orth");
  const Matrix x = random_matrix(500, 10, rng);
  const Matrix y = matmul(x, random_matrix(10, 10, rng)) + random_matrix(500, 10, rng);
  const Matrix q = random_orthogonal(10, rng);
  CHECK(std::abs(svcca_similarity(matmul(x, q), y) - svcca_similarity(x, y)) < 1e-6);
}

TEST_CASE("independent Gaussian matrices are dissimilar") {
  Rng rng = rng_fork(4, "null");
  const Matrix x = random_matrix(2000, 20, rng);
  const Matrix y = random_matrix(2000, 20, rng);
  const double s = svcca_similarity(x, y);
  MESSAGE("null similarity " << s);
  CHECK(s < 0.25);
}

TEST_CASE("symmetry and range") {
  Rng rng = rng_fork(5, "sym");
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(300, 8, rng);
    const Matrix y = matmul(x, random_matrix(8, 6, rng)) + random_matrix(300, 6, rng, 0.5);
    const SvccaDetail a = svcca_detail(x, y), b = svcca_detail(y, x);
    CHECK(std::abs(a.mean - b.mean) < 1e-8);
    for (double c : a.correlations) CHECK(c <= 1.0 + 1e-9);
    CHECK(a.mean >= 0.0);
    CHECK(a.mean <= 1.0);
  }
}

TEST_CASE("matches Cholesky-whitened CCA when every direction is kept") {
  Rng rng = rng_fork(6, "oracle");
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(200, 6, rng);
    const Matrix y = matmul(x, random_matrix(6, 5, rng)) + random_matrix(200, 5, rng, 2.0);
    const SvccaDetail d = svcca_detail(x, y);
    REQUIRE(d.kept_x == 6);
    REQUIRE(d.kept_y == 5);
    CHECK(std::abs(d.mean - cholesky_cca_mean(x, y)) < 1e-8);
  }
}

TEST_CASE("truncation keeps the smallest 99% prefix") {
  Rng rng = rng_fork(7, "trunc");
  Matrix x = random_matrix(500, 5, rng);
  for (std::size_t i = 0; i < x.rows(); ++i) x(i, 4) *= 1e-3;
  CHECK(reduce(x).basis.cols() == 4);
}

TEST_CASE("errors: too few frames and rank collapse") {
  Rng rng = rng_fork(8, "err");
  CHECK_THROWS_WITH_AS(svcca_similarity(random_matrix(20, 8, rng), random_matrix(20, 8, rng)),
                       doctest::Contains("frames per dimension"), ConfigError);
  CHECK_THROWS_WITH_AS(reduce(Matrix(50, 3, 2.0)), doctest::Contains("rank collapse"),
                       NumericError);
  CHECK_THROWS_AS(svcca_similarity(random_matrix(50, 3, rng), random_matrix(40, 3, rng)),
                  ConfigError);
}

TEST_CASE("similarity matrix shape, symmetry and identical dumps") {
  Rng rng = rng_fork(9, "mat");
  const Matrix x = random_matrix(100, 4, rng);
  std::vector<ActivationDump> same{{0, x}, {1, x}, {2, x}};
  const Matrix ones = similarity_matrix(same);
  for (double v : ones.data()) CHECK(std::abs(v - 1.0) < 1e-8);

  std::vector<ActivationDump> mixed{{0, x}, {1, random_matrix(100, 4, rng)}, {2, random_matrix(100, 6, rng)}};
  const Matrix s1 = similarity_matrix(mixed, 1);
  const Matrix s3 = similarity_matrix(mixed, 3);
  CHECK(s1 == s3);
  CHECK(s1.rows() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(std::abs(s1(i, i) - 1.0) < 1e-8);
    for (std::size_t j = 0; j < 3; ++j) CHECK(s1(i, j) == s1(j, i));
  }
  CHECK_THROWS_AS(similarity_matrix({{0, x}}), ConfigError);

  const auto path = (std::filesystem::temp_directory_path() / "ctcprune_sim.csv").string();
  write_similarity_csv(s1, mixed, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "layer,0,1,2");
  std::filesystem::remove(path);
}

TEST_CASE("activation collection") {
  const EncoderModel m = EncoderModel::create(tiny_encoder());
  Rng rng = rng_fork(10, "collect");
  Dataset data(2);
  data[0] = {"a", random_matrix(3, 4, rng), {1}};
  data[1] = {"b", random_matrix(5, 4, rng), {2}};

  const ActivationSet full = collect_activations(m, data, LayerSubset::prefix(3));
  REQUIRE(full.dumps.size() == 4);
  for (const auto& d : full.dumps) CHECK(d.activations.rows() == 8);
  CHECK(full.total_frames == 8);

  const ActivationSet skipped = collect_activations(m, data, LayerSubset({1, 3}));
  CHECK(skipped.dumps[2].activations == skipped.dumps[1].activations);

  const ActivationSet capped = collect_activations(m, data, LayerSubset::prefix(3), {1000, 1});
  CHECK(capped.stride == 1);
  CHECK(capped.dumps[3].activations == full.dumps[3].activations);

  const ActivationSet sub = collect_activations(m, data, LayerSubset::prefix(3), {4, 1});
  CHECK(sub.stride == 2);
  CHECK(sub.dumps[1].activations.rows() == 4);
  CHECK(sub.dumps[1].activations.row(0)[0] == full.dumps[1].activations.row(sub.offset)[0]);

  const auto dir = (std::filesystem::temp_directory_path() / "ctcprune_dumps").string();
  save_activation_dumps(sub, dir, "abc");
  CHECK(load_matrix(dir + "/layer_2.pmat") == sub.dumps[2].activations);
  CHECK(std::filesystem::exists(dir + "/layer_2.json"));
  std::filesystem::remove_all(dir);
}
