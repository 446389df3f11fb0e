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

// Layer-similarity analysis: per-layer activation dumps and mean SVCCA.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctcprune/encoder.hpp"
#include "ctcprune/linalg.hpp"
#include "ctcprune/train.hpp"

namespace ctcprune::svcca {

inline constexpr double kVarianceRetained = 0.99;
inline constexpr double kWhitenEpsilon = 1e-10;
inline constexpr std::size_t kMinRowsPerColumn = 5;

struct ActivationDump {
  std::size_t layer = 0;  // 0 is the encoder input after projection
  Matrix activations;     // N × D, frames of all utterances stacked
};

struct ActivationSet {
  std::vector<ActivationDump> dumps;  // layers 0..L
  std::vector<std::string> utterance_ids;
  std::size_t total_frames = 0;  // before subsampling
  std::size_t stride = 1;
  std::size_t offset = 0;
};

struct SubsampleOptions {
  std::size_t max_frames = 0;  // 0 keeps every frame
  std::uint64_t seed = 0;
};

ActivationSet collect_activations(const EncoderModel& model, const Dataset& data,
                                  const LayerSubset& subset, const SubsampleOptions& options = {});

struct SvccaDetail {
  std::size_t kept_x = 0;
  std::size_t kept_y = 0;
  std::vector<double> correlations;  // raw singular values, before clamping
  double mean = 0.0;                 // mean of the clamped correlations
};

/// Orthonormal basis of the retained directions of one centred matrix,
/// already whitened; reused across every pair it takes part in.
struct ReducedBasis {
  Matrix basis;  // N × k
};

ReducedBasis reduce(const Matrix& x);
SvccaDetail compare(const ReducedBasis& x, const ReducedBasis& y);

SvccaDetail svcca_detail(const Matrix& x, const Matrix& y);
double svcca_similarity(const Matrix& x, const Matrix& y);

/// Symmetric (L+1) × (L+1) matrix over the given dumps, each unordered pair
/// computed once.
Matrix similarity_matrix(const std::vector<ActivationDump>& dumps, std::size_t jobs = 1);

void write_similarity_csv(const Matrix& similarity, const std::vector<ActivationDump>& dumps,
                          const std::string& path);

/// layer_<l>.pmat plus layer_<l>.json per dump.
void save_activation_dumps(const ActivationSet& set, const std::string& dir,
                           const std::string& config_hash);

}  // namespace ctcprune::svcca
