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
#include <vector>

#include "ctcprune/linalg.hpp"
#include "ctcprune/nn.hpp"

namespace ctcprune::ctc {

inline constexpr int kBlank = 0;

/// Label ids in [1, V-1]; never blank.
using LabelSequence = std::vector<int>;
/// One symbol per frame, blank allowed.
using Alignment = std::vector<int>;

/// Merges consecutive repeats, then drops blanks.
LabelSequence collapse(const Alignment& a);

/// Smallest T admitting an alignment of y: |y| plus one blank between every
/// pair of equal neighbours.
std::size_t min_frames(const LabelSequence& y);

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // ∂loss/∂logits, T×V
};

/// Negative log-likelihood of y under per-frame softmax(logits), summed over
/// all alignments by the blank-augmented forward-backward recursion in log
/// space. Throws NumericError ("infeasible alignment") when T < min_frames(y)
/// and ConfigError for V < 2 or labels outside [1, V-1].
LossAndGrad ctc_loss(const Matrix& logits, const LabelSequence& y);

/// Same loss without the gradient.
double ctc_forward(const Matrix& logits, const LabelSequence& y);

inline constexpr std::uint64_t kBruteForceBudget = 1'000'000;

/// Literal enumeration of all V^T alignments. Test oracle; throws ConfigError
/// when V^T exceeds kBruteForceBudget and NumericError when no alignment
/// collapses to y.
double ctc_brute_force(const Matrix& logits, const LabelSequence& y);

/// Per-frame argmax (ties to the smallest id), then collapse.
LabelSequence greedy_decode(const Matrix& logits);

/// Levenshtein distance with unit costs.
std::size_t edit_distance(const LabelSequence& a, const LabelSequence& b);

/// CTC loss as a 1×1 tape node over `logits`.
nn::Var ctc_loss(nn::Tape& t, nn::Var logits, const LabelSequence& y);

}  // namespace ctcprune::ctc
