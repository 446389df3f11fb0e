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

// Shared helpers for the test binaries: random instances and the
// finite-difference gradient oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ctcprune/linalg.hpp"
#include "ctcprune/nn.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.normal(0.0, scale);
  return m;
}

inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      out(i, j) = acc;
    }
  return out;
}

inline double relative_error(const Matrix& got, const Matrix& want, double floor = 1e-8) {
  return frobenius_norm(got - want) / std::max(frobenius_norm(want), floor);
}

/// Fixed random projection of a matrix output onto a scalar, so every entry
/// sees a distinct upstream gradient.
inline double project_scalar(const Matrix& out, const Matrix& probe) {
  double acc = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * probe.data()[i];
  return acc;
}

/// Tape node for project_scalar.
inline nn::Var probe_loss(nn::Tape& t, nn::Var out, const Matrix& probe) {
  const double acc = project_scalar(t.value(out), probe);
  return t.push(Matrix(1, 1, acc), [out, probe](nn::Tape& t, nn::Var o) {
    const double g = t.grad(o)(0, 0);
    Matrix& go = t.grad(out);
    for (std::size_t i = 0; i < go.size(); ++i) go.data()[i] += g * probe.data()[i];
  });
}

/// Central differences of a scalar function with respect to every entry of
/// `target`, perturbing in place and restoring.
inline Matrix finite_difference(Matrix& target, const std::function<double()>& loss,
                                double step = 1e-5) {
  Matrix g(target.rows(), target.cols());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double saved = target.data()[i];
    target.data()[i] = saved + step;
    const double up = loss();
    target.data()[i] = saved - step;
    const double down = loss();
    target.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// Reverse-mode gradients against central differences for every tensor;
/// returns the worst per-tensor relative error.
inline double worst_gradient_error(std::vector<nn::ParamTensor*> params,
                                   const std::function<double()>& loss,
                                   const std::function<void()>& accumulate, std::string* worst = nullptr) {
  for (auto* p : params) p->zero_grad();
  accumulate();
  double worst_err = 0.0;
  for (auto* p : params) {
    const Matrix fd = finite_difference(p->value, loss);
    const double err = relative_error(p->grad, fd);
    if (err > worst_err) {
      worst_err = err;
      if (worst) *worst = p->name;
    }
  }
  return worst_err;
}

}  // namespace ctcprune::testing
