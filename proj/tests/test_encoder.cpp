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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "ctcprune/ctc.hpp"
#include "ctcprune/encoder.hpp"
#include "ctcprune/error.hpp"
#include "test_util.hpp"

using namespace ctcprune;
using ctcprune::testing::random_matrix;

namespace {

EncoderConfig small_config(std::size_t layers = 4, double keep = 0.9) {
  EncoderConfig c;
  c.layers = layers;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  c.vocab = 5;
  c.input_dim = 6;
  c.keep_prob = keep;
  c.taps = layers > 2 ? std::vector<std::size_t>{1, 2} : std::vector<std::size_t>{};
  c.inter_weight = layers > 2 ? 2.0 / 3.0 : 0.0;
  c.seed = 3;
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ctcprune_" + name)).string();
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  auto bad = [&](auto mutate) {
    EncoderConfig b = small_config();
    mutate(b);
    CHECK_THROWS_AS(b.validate(), ConfigError);
  };
  bad([](EncoderConfig& b) { b.heads = 3; });
  bad([](EncoderConfig& b) { b.keep_prob = 0.0; });
  bad([](EncoderConfig& b) { b.keep_prob = 1.5; });
  bad([](EncoderConfig& b) { b.inter_weight = -0.1; });
  bad([](EncoderConfig& b) { b.taps = {2, 2}; });
  bad([](EncoderConfig& b) { b.taps = {4}; });
  bad([](EncoderConfig& b) { b.taps = {0}; });
  CHECK(EncoderConfig::from_text(c.to_text()) == c);
}

TEST_CASE("layer subsets") {
  CHECK(LayerSubset::prefix(3).indices() == std::vector<std::size_t>{1, 2, 3});
  CHECK(LayerSubset({2, 4}).to_string() == "{2,4}");
  CHECK_THROWS_AS(LayerSubset({3, 2}), ConfigError);
  CHECK_THROWS_AS(LayerSubset({0, 2}), ConfigError);
  CHECK_THROWS_AS(LayerSubset().check_within(4), ConfigError);
  CHECK_THROWS_AS(LayerSubset({2, 5}).check_within(4), ConfigError);
  CHECK(LayerSubset({1, 3}) < LayerSubset({2}));
}

TEST_CASE("forward produces L+1 outputs and rejects bad subsets") {
  const EncoderModel m = EncoderModel::create(small_config());
  Rng rng = rng_fork(1, "x");
  const Matrix x = random_matrix(7, 6, rng);
  const ForwardTrace tr = forward(m, x);
  CHECK(tr.outputs.size() == 5);
  CHECK(tr.kept == std::vector<int>{1, 1, 1, 1});
  for (const auto& o : tr.outputs) CHECK(o.rows() == 7);
  CHECK_THROWS_AS(forward(m, x, LayerSubset({5})), ConfigError);
  CHECK_THROWS_AS(forward(m, random_matrix(3, 5, rng)), ConfigError);
}

TEST_CASE("keep probability 1: train mode equals eval mode bit for bit") {
  const EncoderModel m = EncoderModel::create(small_config(4, 1.0));
  Rng data = rng_fork(2, "x");
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(5, 6, data);
    Rng drop = rng_fork(static_cast<std::uint64_t>(trial), "drop");
    const ForwardTrace train = forward(m, x, LayerSubset::prefix(4), &drop);
    const ForwardTrace eval = forward(m, x);
    CHECK(train.outputs == eval.outputs);
  }
}

TEST_CASE("a dropped layer is an exact identity") {
  const EncoderModel m = EncoderModel::create(small_config(4, 0.5));
  Rng data = rng_fork(3, "x");
  const Matrix x = random_matrix(5, 6, data);
  bool saw_layer3_drop = false;
  for (std::uint64_t s = 0; s < 64; ++s) {
    Rng drop = rng_fork(s, "drop");
    const ForwardTrace tr = forward(m, x, LayerSubset::prefix(4), &drop);
    for (std::size_t l = 1; l <= 4; ++l) {
      if (tr.kept[l - 1] == 0) CHECK(tr.outputs[l] == tr.outputs[l - 1]);
      else CHECK(tr.outputs[l] != tr.outputs[l - 1]);
    }
    saw_layer3_drop |= tr.kept[2] == 0;
  }
  CHECK(saw_layer3_drop);
}

TEST_CASE("layers outside the subset are identities; prefix equals induced model") {
  const EncoderModel m = EncoderModel::create(small_config());
  Rng data = rng_fork(4, "x");
  const Matrix x = random_matrix(6, 6, data);
  const ForwardTrace masked = forward(m, x, LayerSubset({1, 2}));
  CHECK(masked.outputs[3] == masked.outputs[2]);
  CHECK(masked.outputs[4] == masked.outputs[2]);

  const EncoderModel prefix = induce_submodel(m, LayerSubset::prefix(2));
  CHECK(prefix.config.layers == 2);
  CHECK(prefix.config.taps == std::vector<std::size_t>{1});
  const ForwardTrace direct = forward(prefix, x);
  CHECK(direct.outputs.back() == masked.outputs.back());
}

TEST_CASE("induced sub-models match masked forward") {
  const EncoderModel m = EncoderModel::create(small_config());
  CHECK(induce_submodel(m, LayerSubset::prefix(4)).parameter_hash() == m.parameter_hash());
  const EncoderModel sub = induce_submodel(m, LayerSubset({2, 4}));
  CHECK(sub.layers[0].wq.value == m.layers[1].wq.value);
  CHECK(sub.layers[1].wq.name == "layers.2.attn.wq");
  CHECK(sub.config.taps == std::vector<std::size_t>{1});
  Rng data = rng_fork(5, "x");
  for (int i = 0; i < 20; ++i) {
    const Matrix x = random_matrix(static_cast<std::size_t>(data.integer(1, 9)), 6, data);
    const Matrix a = project_to_vocab(sub, forward(sub, x).outputs.back());
    const Matrix b = project_to_vocab(m, forward(m, x, LayerSubset({2, 4})).outputs.back());
    CHECK(a == b);
  }
  CHECK_THROWS_AS(induce_submodel(m, LayerSubset()), ConfigError);
}

TEST_CASE("projection is shared by every tap") {
  EncoderModel m = EncoderModel::create(small_config());
  Rng data = rng_fork(6, "x");
  const Matrix x = random_matrix(4, 6, data);
  const ForwardTrace tr = forward(m, x);

  // The tap path and the final path run the same code on the same weights.
  nn::Tape t;
  nn::Var h = t.constant(tr.outputs[2]);
  const Matrix via_tape = t.value(project_to_vocab(m, t, h));
  CHECK(via_tape == project_to_vocab(m, tr.outputs[2]));

  std::vector<Matrix> before;
  for (const auto& o : tr.outputs) before.push_back(project_to_vocab(m, o));
  m.ctc_b.value(0, 3) += 0.75;
  for (std::size_t l = 0; l < tr.outputs.size(); ++l) {
    const Matrix after = project_to_vocab(m, tr.outputs[l]);
    for (std::size_t r = 0; r < after.rows(); ++r)
      for (std::size_t k = 0; k < after.cols(); ++k)
        CHECK(after(r, k) - before[l](r, k) == doctest::Approx(k == 3 ? 0.75 : 0.0).epsilon(1e-12));
  }

  EncoderModel zero = EncoderModel::create(small_config());
  zero.ctc_b.value.fill(0.0);
  const Matrix z = project_to_vocab(zero, Matrix(3, 8));
  for (double v : z.data()) CHECK(v == 0.0);
  CHECK(z.rows() == 3);
  CHECK(z.cols() == 5);
}

namespace {

struct MonteCarlo {
  Matrix mean;
  Matrix se;
};

MonteCarlo layer_monte_carlo(const EncoderModel& m, const Matrix& x, int n, std::uint64_t seed) {
  Rng drop = rng_fork(seed, "drop");
  const Matrix first = forward(m, x).outputs[1];
  Matrix sum(first.rows(), first.cols()), sum_sq(first.rows(), first.cols());
  for (int i = 0; i < n; ++i) {
    const Matrix out = forward(m, x, LayerSubset::prefix(1), &drop).outputs[1];
    for (std::size_t k = 0; k < out.size(); ++k) {
      sum.data()[k] += out.data()[k];
      sum_sq.data()[k] += out.data()[k] * out.data()[k];
    }
  }
  MonteCarlo mc{Matrix(first.rows(), first.cols()), Matrix(first.rows(), first.cols())};
  for (std::size_t k = 0; k < first.size(); ++k) {
    const double mean = sum.data()[k] / n;
    const double var = std::max(sum_sq.data()[k] / n - mean * mean, 0.0);
    mc.mean.data()[k] = mean;
    mc.se.data()[k] = std::sqrt(var / n);
  }
  return mc;
}

double worst_z(const MonteCarlo& mc, const Matrix& target) {
  double worst = 0.0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double dev = std::abs(mc.mean.data()[k] - target.data()[k]);
    if (mc.se.data()[k] == 0.0) {
      if (dev > 1e-12) return INFINITY;
      continue;
    }
    worst = std::max(worst, dev / mc.se.data()[k]);
  }
  return worst;
}

}  // namespace

TEST_CASE("scaled residual branch is unbiased: attention only") {
  // With the feed-forward branch zeroed the layer output is x + (u/p)·MHA(x).
  EncoderModel m = EncoderModel::create(small_config(1, 0.9));
  m.layers[0].w2.value.fill(0.0);
  m.layers[0].b2.value.fill(0.0);
  Rng data = rng_fork(7, "x");
  const Matrix x = random_matrix(3, 6, data);
  const Matrix eval = forward(m, x).outputs[1];
  const MonteCarlo mc = layer_monte_carlo(m, x, 100000, 8);
  CHECK(worst_z(mc, eval) < 4.0);
}

TEST_CASE("scaled residual branch is unbiased: feed-forward only") {
  EncoderModel m = EncoderModel::create(small_config(1, 0.8));
  m.layers[0].wo.value.fill(0.0);
  Rng data = rng_fork(9, "x");
  const Matrix x = random_matrix(4, 6, data);
  const Matrix eval = forward(m, x).outputs[1];
  const MonteCarlo mc = layer_monte_carlo(m, x, 100000, 10);
  CHECK(worst_z(mc, eval) < 4.0);
}

TEST_CASE("full layer Monte Carlo mean matches the two-point expectation") {
  // u ∈ {0, 1}, so E[out] = (1-p)·x + p·out(u=1) exactly. This differs from
  // eval mode because the feed-forward branch sees the rescaled attention.
  const EncoderConfig c = small_config(1, 0.9);
  const EncoderModel m = EncoderModel::create(c);
  Rng data = rng_fork(11, "x");
  const Matrix x = random_matrix(3, 6, data);
  const ForwardTrace eval = forward(m, x);
  Matrix kept_out;
  for (std::uint64_t s = 0;; ++s) {
    Rng r = rng_fork(s, "find");
    const ForwardTrace t = forward(m, x, LayerSubset::prefix(1), &r);
    if (t.kept[0] == 1) {
      kept_out = t.outputs[1];
      break;
    }
  }
  const Matrix expected = eval.outputs[0] * (1.0 - c.keep_prob) + kept_out * c.keep_prob;
  const MonteCarlo mc = layer_monte_carlo(m, x, 100000, 12);
  CHECK(worst_z(mc, expected) < 4.0);
  CHECK(frobenius_norm(expected - eval.outputs[1]) > 0.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const EncoderModel m = EncoderModel::create(small_config());
  const std::string path = temp_path("ckpt_roundtrip.ckpt");
  save_checkpoint(m, path);
  const EncoderModel loaded = load_checkpoint(path);
  CHECK(loaded.config == m.config);
  CHECK(loaded.parameter_hash() == m.parameter_hash());

  std::stringstream a, b;
  write_checkpoint(a, m);
  write_checkpoint(b, loaded);
  CHECK(a.str() == b.str());
  CHECK(a.str().substr(0, 4) == "PCTC");

  Rng data = rng_fork(9, "x");
  const Matrix x = random_matrix(5, 6, data);
  CHECK(forward(loaded, x).outputs == forward(m, x).outputs);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption produces distinct errors") {
  const EncoderModel m = EncoderModel::create(small_config());
  std::stringstream ss;
  write_checkpoint(ss, m);
  const std::string bytes = ss.str();

  std::string magic = bytes;
  magic[1] = 'Z';
  std::stringstream in1(magic);
  CHECK_THROWS_WITH_AS(read_checkpoint(in1), doctest::Contains("bad magic"), DataError);

  std::string version = bytes;
  version[4] = 7;
  std::stringstream in2(version);
  CHECK_THROWS_WITH_AS(read_checkpoint(in2), doctest::Contains("version mismatch"), DataError);

  std::stringstream in3(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_WITH_AS(read_checkpoint(in3), doctest::Contains("truncated"), DataError);

  CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.ckpt")), DataError);
}

TEST_CASE("parameter manifest order and count") {
  const EncoderModel m = EncoderModel::create(small_config(2));
  const auto ps = m.params();
  REQUIRE(ps.size() == 2 + 2 * 12 + 4);
  CHECK(ps.front()->name == "input.w");
  CHECK(ps[2]->name == "layers.1.norm_att.gain");
  CHECK(ps.back()->name == "ctc.b");
  CHECK(m.parameter_count() ==
        6 * 8 + 8 + 2 * (8 + 8 + 4 * 64 + 8 + 8 + 8 * 16 + 16 + 16 * 8 + 8) + 8 + 8 + 8 * 5 + 5);
}

TEST_CASE("positional encoding is the fixed sinusoid") {
  const Matrix pe = positional_encoding(3, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(2, 0) == doctest::Approx(std::sin(2.0)));
  CHECK(pe(2, 3) == doctest::Approx(std::cos(2.0 / 100.0)));
}
