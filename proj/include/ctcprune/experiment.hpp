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

// Experiment configuration: one flat `key = value` file covering the task,
// model geometry, training, analysis, pruning and benchmarking.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "ctcprune/encoder.hpp"
#include "ctcprune/train.hpp"

namespace ctcprune {

enum class TrainMode { kPruningAware, kBaselineA, kBaselineB };

/// "pruning-aware", "baseline-A", "baseline-B"
TrainMode parse_train_mode(const std::string& text);
std::string to_string(TrainMode mode);

struct ExperimentConfig {
  SyntheticTaskSpec task;
  std::size_t train_size = 2000;
  std::size_t val_size = 200;
  std::size_t test_size = 500;

  std::size_t layers = 8;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t heads = 4;
  double keep_prob = 0.9;
  double aware_weight = 2.0 / 3.0;
  double baseline_b_weight = 0.3;

  TrainConfig train;

  std::size_t analyze_max_frames = 4000;
  std::uint64_t analyze_seed = 1;

  std::size_t prune_target_depth = 0;  // 0 means layers / 2
  double prune_val_fraction = 1.0;
  std::uint64_t prune_seed = 1;

  std::size_t bench_reps = 5;
  std::size_t bench_warmup = 2;

  std::size_t jobs = 1;

  std::vector<std::size_t> baseline_depths = {2, 3, 4, 5, 6, 7, 8};
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  /// Parses `key = value` lines; `#` starts a comment. Unset keys keep their
  /// defaults; unknown keys and malformed values are ConfigError.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Every key in fixed order with its resolved value.
  std::string to_text() const;
  /// 16 hex digits of FNV-1a over to_text().
  std::string hash() const;
  void validate() const;

  /// Value of one key as it appears in to_text(); ConfigError if unknown.
  std::string get(const std::string& key) const;

  std::size_t target_depth() const;

  /// Model configuration for a training mode at a given depth:
  ///   pruning-aware: taps {L/4, L/2} within [1, L-1], w = aware_weight, p = keep_prob
  ///   baseline-A:    no taps, w = 0, p = 1
  ///   baseline-B:    tap {L/2}, w = baseline_b_weight, p = keep_prob
  EncoderConfig encoder_config(TrainMode mode, std::size_t depth, std::uint64_t seed) const;
  TrainConfig train_config(std::uint64_t seed) const;
};

}  // namespace ctcprune
