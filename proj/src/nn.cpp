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

#include "ctcprune/nn.hpp"

#include <cmath>

#include <fmt/format.h>

#include "ctcprune/error.hpp"

namespace ctcprune::nn {

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(fan_in, fan_out);
  for (double& v : m.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return m;
}

LayerParams LayerParams::create(std::size_t d_model, std::size_t d_ff,
                                const std::string& prefix, Rng& rng) {
  LayerParams p;
  p.norm_att_gain = ParamTensor("", Matrix(1, d_model, 1.0));
  p.norm_att_bias = ParamTensor("", Matrix(1, d_model));
  p.wq = ParamTensor("", xavier_uniform(d_model, d_model, rng));
  p.wk = ParamTensor("", xavier_uniform(d_model, d_model, rng));
  p.wv = ParamTensor("", xavier_uniform(d_model, d_model, rng));
  p.wo = ParamTensor("", xavier_uniform(d_model, d_model, rng));
  p.norm_ff_gain = ParamTensor("", Matrix(1, d_model, 1.0));
  p.norm_ff_bias = ParamTensor("", Matrix(1, d_model));
  p.w1 = ParamTensor("", xavier_uniform(d_model, d_ff, rng));
  p.b1 = ParamTensor("", Matrix(1, d_ff));
  p.w2 = ParamTensor("", xavier_uniform(d_ff, d_model, rng));
  p.b2 = ParamTensor("", Matrix(1, d_model));
  p.set_prefix(prefix);
  return p;
}

std::vector<ParamTensor*> LayerParams::params() {
  return {&norm_att_gain, &norm_att_bias, &wq, &wk, &wv, &wo,
          &norm_ff_gain,  &norm_ff_bias,  &w1, &b1, &w2, &b2};
}

std::vector<const ParamTensor*> LayerParams::params() const {
  return {&norm_att_gain, &norm_att_bias, &wq, &wk, &wv, &wo,
          &norm_ff_gain,  &norm_ff_bias,  &w1, &b1, &w2, &b2};
}

void LayerParams::set_prefix(const std::string& prefix) {
  static const char* kNames[] = {"norm_att.gain", "norm_att.bias", "attn.wq", "attn.wk",
                                 "attn.wv",       "attn.wo",       "norm_ff.gain", "norm_ff.bias",
                                 "ff.w1",         "ff.b1",         "ff.w2",   "ff.b2"};
  auto ps = params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->name = prefix + "." + kNames[i];
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(ParamTensor& p) {
  Node n;
  n.external = &p.value;
  n.sink = &p;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::param(const ParamTensor& p) {
  Node n;
  n.external = &p.value;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::function<void(Tape&, Var)> backward) {
  Node n;
  n.owned = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::value(Var v) const {
  if (v.id >= nodes_.size()) throw ConfigError("tape value of an unrecorded variable");
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.owned;
}

Matrix& Tape::grad(Var v) {
  if (v.id >= nodes_.size()) throw ConfigError("tape gradient of an unrecorded variable");
  Node& n = nodes_[v.id];
  if (n.grad.empty()) {
    const Matrix& val = n.external ? *n.external : n.owned;
    n.grad = Matrix(val.rows(), val.cols());
  }
  return n.grad;
}

bool Tape::has_grad(Var v) const { return v.id < nodes_.size() && !nodes_[v.id].grad.empty(); }

void Tape::backward(Var loss, double seed) {
  if (nodes_.empty() || !loss.valid() || loss.id >= nodes_.size()) {
    throw ConfigError("backward called before any forward computation was recorded");
  }
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ConfigError(fmt::format("backward needs a scalar loss, got {}", lv.shape_string()));
  }
  grad(loss)(0, 0) += seed;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, Var{i});
    if (n.sink) n.sink->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = ctcprune::matmul(t.value(a), t.value(b));
  return t.push(std::move(out), [a, b](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    t.grad(a) += matmul_nt(g, t.value(b));
    t.grad(b) += matmul_tn(t.value(a), g);
  });
}

Var add(Tape& t, Var a, Var b) {
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), [a, b](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    t.grad(a) += g;
    t.grad(b) += g;
  });
}

Var add_row(Tape& t, Var x, Var row) {
  const Matrix& xv = t.value(x);
  const Matrix& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != xv.cols()) {
    throw ConfigError(
        fmt::format("add_row shape mismatch: {} + {}", xv.shape_string(), rv.shape_string()));
  }
  Matrix out = xv;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv(0, j);
  }
  return t.push(std::move(out), [x, row](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    t.grad(x) += g;
    Matrix& gr = t.grad(row);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
  });
}

Var scale(Tape& t, Var x, double factor) {
  Matrix out = t.value(x) * factor;
  return t.push(std::move(out), [x, factor](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    Matrix& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data()[i] += factor * g.data()[i];
  });
}

Var relu(Tape& t, Var x) {
  Matrix out = t.value(x);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.push(std::move(out), [x](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    const Matrix& y = t.value(o);
    Matrix& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (y.data()[i] > 0.0) gx.data()[i] += g.data()[i];
  });
}

Var linear(Tape& t, Var x, Var w, Var b) {
  Var y = matmul(t, x, w);
  return b.valid() ? add_row(t, y, b) : y;
}

Var layer_norm(Tape& t, Var x, Var gain, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d < 2) throw ConfigError("layer_norm needs at least two features per row");
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
    throw ConfigError(fmt::format("layer_norm parameter shapes {} / {} do not match width {}",
                                  gv.shape_string(), bv.shape_string(), d));
  }
  Matrix normalized(rows, d);
  std::vector<double> inv_std(rows);
  Matrix out(rows, d);
  for (std::size_t i = 0; i < rows; ++i) {
    auto r = xv.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mean) * inv;
      normalized(i, j) = h;
      out(i, j) = h * gv(0, j) + bv(0, j);
    }
  }
  return t.push(std::move(out), [x, gain, bias, normalized = std::move(normalized),
                                 inv_std = std::move(inv_std)](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    const Matrix& gv = t.value(gain);
    const std::size_t rows = g.rows(), d = g.cols();
    Matrix& gx = t.grad(x);
    Matrix& gg = t.grad(gain);
    Matrix& gb = t.grad(bias);
    std::vector<double> dh(d);
    for (std::size_t i = 0; i < rows; ++i) {
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        gg(0, j) += g(i, j) * normalized(i, j);
        gb(0, j) += g(i, j);
        dh[j] = g(i, j) * gv(0, j);
        mean_dh += dh[j];
        mean_dh_h += dh[j] * normalized(i, j);
      }
      mean_dh /= static_cast<double>(d);
      mean_dh_h /= static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j)
        gx(i, j) += inv_std[i] * (dh[j] - mean_dh - normalized(i, j) * mean_dh_h);
    }
  });
}

std::vector<Matrix> attention_weights(const Matrix& q, const Matrix& k, std::size_t heads) {
  const std::size_t steps = q.rows(), d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(fmt::format("model width {} is not divisible by {} heads", d, heads));
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(heads, Matrix(steps, steps));
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix& a = probs[h];
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < steps; ++i) {
      const double* qi = q.row(i).data() + off;
      double max = -INFINITY;
      for (std::size_t j = 0; j < steps; ++j) {
        const double* kj = k.row(j).data() + off;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= scale;
        a(i, j) = s;
        max = std::max(max, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < steps; ++j) {
        a(i, j) = std::exp(a(i, j) - max);
        z += a(i, j);
      }
      for (std::size_t j = 0; j < steps; ++j) a(i, j) /= z;
    }
  }
  return probs;
}

namespace {

// concat_h(softmax(Q_h K_hᵀ / √d_h) V_h) as one node over Q, K, V.
Var attention_core(Tape& t, Var q, Var k, Var v, std::size_t heads) {
  const Matrix& qv = t.value(q);
  const Matrix& kv = t.value(k);
  const Matrix& vv = t.value(v);
  const std::size_t steps = qv.rows(), d = qv.cols();
  std::vector<Matrix> probs = attention_weights(qv, kv, heads);
  const std::size_t dh = d / heads;
  Matrix out(steps, d);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < steps; ++i) {
      double* oi = out.row(i).data() + off;
      for (std::size_t j = 0; j < steps; ++j) {
        const double w = probs[h](i, j);
        const double* vj = vv.row(j).data() + off;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
      }
    }
  }
  return t.push(std::move(out), [q, k, v, heads, probs = std::move(probs)](Tape& t, Var o) {
    const Matrix& g = t.grad(o);
    const Matrix& qv = t.value(q);
    const Matrix& kv = t.value(k);
    const Matrix& vv = t.value(v);
    Matrix& gq = t.grad(q);
    Matrix& gk = t.grad(k);
    Matrix& gv = t.grad(v);
    const std::size_t steps = g.rows(), d = g.cols(), dh = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix ds(steps, steps);
    for (std::size_t h = 0; h < heads; ++h) {
      const Matrix& a = probs[h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < steps; ++i) {
        const double* gi = g.row(i).data() + off;
        double row_dot = 0.0;
        for (std::size_t j = 0; j < steps; ++j) {
          const double* vj = vv.row(j).data() + off;
          double* gvj = gv.row(j).data() + off;
          double da = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            da += gi[c] * vj[c];
            gvj[c] += a(i, j) * gi[c];
          }
          ds(i, j) = da;
          row_dot += da * a(i, j);
        }
        for (std::size_t j = 0; j < steps; ++j) ds(i, j) = a(i, j) * (ds(i, j) - row_dot) * scale;
      }
      for (std::size_t i = 0; i < steps; ++i) {
        double* gqi = gq.row(i).data() + off;
        const double* qi = qv.row(i).data() + off;
        for (std::size_t j = 0; j < steps; ++j) {
          const double s = ds(i, j);
          if (s == 0.0) continue;
          const double* kj = kv.row(j).data() + off;
          double* gkj = gk.row(j).data() + off;
          for (std::size_t c = 0; c < dh; ++c) {
            gqi[c] += s * kj[c];
            gkj[c] += s * qi[c];
          }
        }
      }
    }
  });
}

}  // namespace

Var self_attention(Tape& t, Var x, Var wq, Var wk, Var wv, Var wo, std::size_t heads) {
  const std::size_t d = t.value(x).cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError(fmt::format("model width {} is not divisible by {} heads", d, heads));
  }
  if (t.value(x).rows() == 0) throw ConfigError("self_attention over an empty sequence");
  Var q = matmul(t, x, wq);
  Var k = matmul(t, x, wk);
  Var v = matmul(t, x, wv);
  Var ctx = attention_core(t, q, k, v, heads);
  return matmul(t, ctx, wo);
}

Var feed_forward(Tape& t, Var x, Var w1, Var b1, Var w2, Var b2) {
  Var hidden = relu(t, linear(t, x, w1, b1));
  return linear(t, hidden, w2, b2);
}

Var sum(Tape& t, Var x) {
  double acc = 0.0;
  for (double v : t.value(x).data()) acc += v;
  return t.push(Matrix(1, 1, acc), [x](Tape& t, Var o) {
    const double g = t.grad(o)(0, 0);
    for (double& v : t.grad(x).data()) v += g;
  });
}

Var weighted_sum(Tape& t, const std::vector<Var>& terms, const std::vector<double>& weights) {
  if (terms.size() != weights.size()) throw ConfigError("weighted_sum arity mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) acc += weights[i] * t.value(terms[i])(0, 0);
  return t.push(Matrix(1, 1, acc), [terms, weights](Tape& t, Var o) {
    const double g = t.grad(o)(0, 0);
    for (std::size_t i = 0; i < terms.size(); ++i) t.grad(terms[i])(0, 0) += weights[i] * g;
  });
}

}  // namespace ctcprune::nn
