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

// Wall-clock decoding cost of prefix sub-models at several depths.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctcprune/encoder.hpp"
#include "ctcprune/train.hpp"

namespace ctcprune::bench {

struct BenchRow {
  std::size_t depth = 0;
  double median_ms = 0.0;  // per utterance
  double fps = 0.0;        // frames per second
  double speedup = 0.0;    // full-depth median / this median
  std::vector<double> rep_ms;
};

struct BenchReport {
  std::vector<BenchRow> rows;  // in the requested depth order
  std::size_t reps = 0;
  std::size_t warmup = 0;
  std::size_t utterances = 0;
  std::size_t frames = 0;
};

/// Times forward + projection + greedy decoding of {1..k} for every k in
/// `depths`, single-threaded, interleaving depths within each repetition.
/// Full depth is always timed as the speedup reference.
BenchReport benchmark_depths(const EncoderModel& model, const Dataset& data,
                             const std::vector<std::size_t>& depths, std::size_t reps = 5,
                             std::size_t warmup = 2);

/// Aggregate frames per second of {1..k} for each depth with utterances
/// spread over `jobs` threads; median of `reps` passes after one warmup.
/// Kept apart from the single-thread rows, which are the reference numbers.
std::vector<double> parallel_fps(const EncoderModel& model, const Dataset& data,
                                 const std::vector<std::size_t>& depths, std::size_t jobs,
                                 std::size_t reps = 5);

/// depth,median_ms,fps,speedup
void write_bench_csv(const BenchReport& report, const std::string& path);

}  // namespace ctcprune::bench
