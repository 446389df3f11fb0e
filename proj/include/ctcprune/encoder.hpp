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
#include <string>
#include <vector>

#include "ctcprune/linalg.hpp"
#include "ctcprune/nn.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune {

struct EncoderConfig {
  std::size_t layers = 8;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t heads = 4;
  std::size_t vocab = 17;      // including blank (id 0)
  std::size_t input_dim = 16;
  double keep_prob = 0.9;      // probability that a layer is applied in training
  std::vector<std::size_t> taps = {2, 4};  // 1-based layers feeding the intermediate loss
  double inter_weight = 2.0 / 3.0;
  std::uint64_t seed = 1;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  /// Canonical `key=value` lines, one per field, fixed order.
  std::string to_text() const;
  static EncoderConfig from_text(const std::string& text);

  bool operator==(const EncoderConfig&) const = default;
};

/// Ordered, strictly increasing, 1-based layer indices.
class LayerSubset {
 public:
  LayerSubset() = default;
  explicit LayerSubset(std::vector<std::size_t> indices);

  /// {1, ..., k}
  static LayerSubset prefix(std::size_t k);

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(std::size_t layer) const;
  /// Throws ConfigError unless non-empty and every index is in [1, layers].
  void check_within(std::size_t layers) const;

  /// "{2,4}"
  std::string to_string() const;

  auto operator<=>(const LayerSubset&) const = default;

 private:
  std::vector<std::size_t> indices_;
};

struct EncoderModel {
  EncoderConfig config;
  nn::ParamTensor input_w, input_b;
  std::vector<nn::LayerParams> layers;
  nn::ParamTensor final_norm_gain, final_norm_bias;
  // The one vocabulary projection, shared by every tap and the last layer.
  nn::ParamTensor ctc_w, ctc_b;

  /// Fresh model with seeded initialization.
  static EncoderModel create(const EncoderConfig& config);

  /// Every parameter in checkpoint manifest order: input, layers 1..L,
  /// final norm, projection.
  std::vector<nn::ParamTensor*> params();
  std::vector<const nn::ParamTensor*> params() const;
  void zero_grad();
  std::size_t parameter_count() const;
  /// FNV-1a over every parameter's bytes, in manifest order.
  std::uint64_t parameter_hash() const;
};

/// Fixed sinusoidal table, rows = positions.
Matrix positional_encoding(std::size_t steps, std::size_t d_model);

/// Layer outputs x_0..x_L and the drop decisions actually realized.
struct ForwardTrace {
  std::vector<Matrix> outputs;  // L + 1 entries
  std::vector<int> kept;        // L entries; 1 = applied, 0 = identity
};

/// Taped variant used by training: outputs are tape variables.
struct TapedTrace {
  std::vector<nn::Var> outputs;
  std::vector<int> kept;
};

/// Forward pass. With `train_rng` null the pass is in eval mode (residual
/// factor 1). Otherwise each layer in `subset` draws u ~ Bernoulli(p) once
/// and both residual branches are scaled by u/p. Layers outside `subset`,
/// and layers with u = 0, pass their input through unchanged.
ForwardTrace forward(const EncoderModel& model, const Matrix& features, const LayerSubset& subset,
                     Rng* train_rng = nullptr);
/// Eval forward over all layers.
ForwardTrace forward(const EncoderModel& model, const Matrix& features);

TapedTrace forward_taped(EncoderModel& model, nn::Tape& tape, const Matrix& features,
                         const LayerSubset& subset, Rng* train_rng);
TapedTrace forward_taped(const EncoderModel& model, nn::Tape& tape, const Matrix& features,
                         const LayerSubset& subset, Rng* train_rng);

/// final_norm then the shared projection; returns T×V logits.
Matrix project_to_vocab(const EncoderModel& model, const Matrix& hidden);
nn::Var project_to_vocab(EncoderModel& model, nn::Tape& tape, nn::Var hidden);

/// New model made of the retained layers in order. Projection, final norm
/// and input projection are copied; taps are remapped onto the retained
/// layers that are not the last.
EncoderModel induce_submodel(const EncoderModel& model, const LayerSubset& subset);

// Checkpoint file: "PCTC", u32 version, u32 config length + canonical config
// text, u32 record count, then per parameter in manifest order a u16 name
// length, the UTF-8 name and a PMAT matrix record.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const EncoderModel& model, const std::string& path);
EncoderModel load_checkpoint(const std::string& path);
void write_checkpoint(std::ostream& out, const EncoderModel& model);
EncoderModel read_checkpoint(std::istream& in);

}  // namespace ctcprune
