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

// Depth pruning without fine-tuning: prefix truncation and the greedy
// one-layer-at-a-time search.

#pragma once

#include <atomic>
#include <cstddef>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ctcprune/encoder.hpp"
#include "ctcprune/train.hpp"

namespace ctcprune::prune {

struct CandidateScore {
  LayerSubset subset;
  double ter = 0.0;
  double loss = 0.0;
};

/// Strict order used to pick a winner: lower TER, then lower loss, then the
/// lexicographically smaller subset.
bool better(const CandidateScore& a, const CandidateScore& b);

/// Thread-safe memo of subset scores for one model and one validation set.
class EvalCache {
 public:
  std::optional<CandidateScore> find(const LayerSubset& subset) const;
  /// Keeps the first score recorded for a subset.
  void insert(const CandidateScore& score);
  std::size_t size() const;
  /// Number of evaluate_with_prefixes passes actually run.
  std::size_t passes() const { return passes_; }
  void count_pass() { ++passes_; }

 private:
  mutable std::mutex mutex_;
  std::map<LayerSubset, CandidateScore> scores_;
  std::atomic<std::size_t> passes_{0};
};

/// {1..k}
LayerSubset intermediate_prune(const EncoderModel& model, std::size_t k);

/// One forward per utterance, scoring `subset` and every prefix of it; all
/// of them are recorded in `cache`. Returned in prefix order.
std::vector<CandidateScore> evaluate_with_prefixes(const EncoderModel& model,
                                                   const LayerSubset& subset, const Dataset& data,
                                                   EvalCache& cache);

/// Cached score, or a fresh prefix pass.
CandidateScore score_subset(const EncoderModel& model, const LayerSubset& subset,
                            const Dataset& data, EvalCache& cache);

/// Every single-layer removal of `current`, plus {1..k-1}, deduplicated and
/// sorted.
std::vector<LayerSubset> step_candidates(const LayerSubset& current);

CandidateScore iterative_prune_step(const EncoderModel& model, const LayerSubset& current,
                                    const Dataset& data, EvalCache& cache, std::size_t jobs = 1);

/// Entries for depths L down to target, depth descending.
using PruneSchedule = std::vector<CandidateScore>;

PruneSchedule run_iterative_prune(const EncoderModel& model, const Dataset& data,
                                  std::size_t target_depth, EvalCache& cache,
                                  std::size_t jobs = 1);
PruneSchedule run_iterative_prune(const EncoderModel& model, const Dataset& data,
                                  std::size_t target_depth, std::size_t jobs = 1);

void write_schedule_json(const PruneSchedule& schedule, const std::string& path,
                         const std::string& config_hash);
PruneSchedule read_schedule_json(const std::string& path);

void export_submodel(const EncoderModel& model, const LayerSubset& subset,
                     const std::string& path);

/// Seeded subset of `fraction` of the utterances, original order kept.
Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed);

}  // namespace ctcprune::prune
