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
#include <functional>
#include <string>
#include <vector>

#include "ctcprune/linalg.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune::nn {

/// A trainable tensor and its gradient accumulator.
struct ParamTensor {
  std::string name;
  Matrix value;
  Matrix grad;

  ParamTensor() = default;
  ParamTensor(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Parameters of one pre-norm encoder layer. Weights act on row vectors:
/// y = x · W.
struct LayerParams {
  ParamTensor norm_att_gain, norm_att_bias;
  ParamTensor wq, wk, wv, wo;
  ParamTensor norm_ff_gain, norm_ff_bias;
  ParamTensor w1, b1, w2, b2;

  /// Allocates a layer; weights Xavier-uniform, biases zero, gains one.
  static LayerParams create(std::size_t d_model, std::size_t d_ff, const std::string& prefix,
                            Rng& rng);

  std::vector<ParamTensor*> params();
  std::vector<const ParamTensor*> params() const;
  /// Renames every member to `<prefix>.<member>`.
  void set_prefix(const std::string& prefix);
};

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Reverse-mode record. Nodes are appended in evaluation order, so reverse
/// insertion order is a reverse topological order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A leaf holding a copy of `value`; its gradient is readable via grad().
  Var constant(Matrix value);
  /// A leaf that reads `p.value` in place and accumulates into `p.grad`.
  Var param(ParamTensor& p);
  /// A leaf that reads `p.value` in place and receives no gradient.
  Var param(const ParamTensor& p);

  /// Appends a computed node. `backward` reads grad(out) and accumulates into
  /// the gradients of its inputs.
  Var push(Matrix value, std::function<void(Tape&, Var out)> backward);

  const Matrix& value(Var v) const;
  /// Gradient buffer of a node; allocated on first access.
  Matrix& grad(Var v);
  bool has_grad(Var v) const;

  /// Seeds d(loss) = seed on the scalar node `loss` and propagates gradients
  /// to every node recorded before it. Throws ConfigError on an empty tape
  /// or a non-scalar loss.
  void backward(Var loss, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    ParamTensor* sink = nullptr;
    std::function<void(Tape&, Var)> backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Each records one node.
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// Adds a 1×C row to every row of x.
Var add_row(Tape& t, Var x, Var row);
Var scale(Tape& t, Var x, double factor);
Var relu(Tape& t, Var x);
/// x · w + b, with b a 1×out row (pass an invalid Var for no bias).
Var linear(Tape& t, Var x, Var w, Var b);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Per-row normalization to zero mean and unit variance, then gain/bias.
/// gain and bias are 1×D rows. Requires D ≥ 2.
Var layer_norm(Tape& t, Var x, Var gain, Var bias);

/// Scaled dot-product attention softmax(Q_h K_hᵀ / √d_h) for every head.
/// Returns `heads` matrices of shape T×T whose rows sum to one.
std::vector<Matrix> attention_weights(const Matrix& q, const Matrix& k, std::size_t heads);

/// Multi-head self-attention without masking; returns concat(heads) · W_o.
/// Throws ConfigError when the model width is not divisible by `heads`.
Var self_attention(Tape& t, Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads);

/// ReLU feed-forward block: relu(x · W_1 + b_1) · W_2 + b_2.
Var feed_forward(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2);

/// Sums the entries of x into a 1×1 node.
Var sum(Tape& t, Var x);
/// Σ_i weights[i] · terms[i] over 1×1 nodes.
Var weighted_sum(Tape& t, const std::vector<Var>& terms, const std::vector<double>& weights);

}  // namespace ctcprune::nn
