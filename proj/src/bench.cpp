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

#include "ctcprune/bench.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

#include <fmt/format.h>

#include "ctcprune/ctc.hpp"
#include "ctcprune/error.hpp"
#include "ctcprune/parallel.hpp"

namespace ctcprune::bench {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::size_t decode_one(const EncoderModel& model, const Utterance& utt,
                       const LayerSubset& subset) {
  const ForwardTrace trace = forward(model, utt.features, subset);
  const Matrix logits = project_to_vocab(model, trace.outputs.back());
  if (!all_finite(logits)) throw NumericError(fmt::format("non-finite logits for {}", utt.id));
  return ctc::greedy_decode(logits).size();
}

// Returns elapsed milliseconds for one pass over the data.
double time_pass(const EncoderModel& model, const Dataset& data, const LayerSubset& subset,
                 std::size_t jobs = 1) {
  std::vector<std::size_t> emitted(data.size());
  const auto start = std::chrono::steady_clock::now();
  parallel_for(data.size(), jobs,
               [&](std::size_t i) { emitted[i] = decode_one(model, data[i], subset); });
  const auto stop = std::chrono::steady_clock::now();
  // Keeps the decode from being optimized away.
  std::size_t total = 0;
  for (std::size_t e : emitted) total += e;
  if (total == static_cast<std::size_t>(-1)) throw NumericError("unreachable");
  return std::chrono::duration<double, std::milli>(stop - start).count();
}

}  // namespace

BenchReport benchmark_depths(const EncoderModel& model, const Dataset& data,
                             const std::vector<std::size_t>& depths, std::size_t reps,
                             std::size_t warmup) {
  if (data.empty()) throw DataError("benchmark dataset is empty");
  if (reps < 3) throw ConfigError(fmt::format("benchmark needs at least 3 repetitions, got {}", reps));
  if (depths.empty()) throw ConfigError("no depths to benchmark");
  const std::size_t full = model.config.layers;
  for (std::size_t d : depths) {
    if (d < 1 || d > full) throw ConfigError(fmt::format("depth {} outside [1, {}]", d, full));
  }

  std::vector<std::size_t> timed = depths;
  if (std::find(timed.begin(), timed.end(), full) == timed.end()) timed.push_back(full);
  std::vector<std::vector<double>> samples(timed.size());
  for (std::size_t r = 0; r < warmup + reps; ++r) {
    for (std::size_t i = 0; i < timed.size(); ++i) {
      const double ms = time_pass(model, data, LayerSubset::prefix(timed[i]));
      if (r >= warmup) samples[i].push_back(ms);
    }
  }

  BenchReport report;
  report.reps = reps;
  report.warmup = warmup;
  report.utterances = data.size();
  for (const auto& u : data) report.frames += u.features.rows();
  const std::size_t full_index =
      static_cast<std::size_t>(std::find(timed.begin(), timed.end(), full) - timed.begin());
  const double full_pass = median(samples[full_index]);
  for (std::size_t i = 0; i < depths.size(); ++i) {
    const double pass = median(samples[i]);
    BenchRow row;
    row.depth = depths[i];
    row.median_ms = pass / static_cast<double>(data.size());
    row.fps = static_cast<double>(report.frames) / (pass / 1000.0);
    row.speedup = depths[i] == full ? 1.0 : full_pass / pass;
    for (double s : samples[i]) row.rep_ms.push_back(s / static_cast<double>(data.size()));
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<double> parallel_fps(const EncoderModel& model, const Dataset& data,
                                 const std::vector<std::size_t>& depths, std::size_t jobs,
                                 std::size_t reps) {
  if (data.empty()) throw DataError("benchmark dataset is empty");
  if (reps < 1) throw ConfigError("parallel benchmark needs at least one repetition");
  std::size_t frames = 0;
  for (const auto& u : data) frames += u.features.rows();
  std::vector<double> out;
  for (std::size_t d : depths) {
    if (d < 1 || d > model.config.layers) {
      throw ConfigError(fmt::format("depth {} outside [1, {}]", d, model.config.layers));
    }
    const LayerSubset subset = LayerSubset::prefix(d);
    time_pass(model, data, subset, jobs);
    std::vector<double> ms;
    for (std::size_t r = 0; r < reps; ++r) ms.push_back(time_pass(model, data, subset, jobs));
    out.push_back(static_cast<double>(frames) / (median(ms) / 1000.0));
  }
  return out;
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << "depth,median_ms,fps,speedup\n";
  for (const auto& r : report.rows)
    out << fmt::format("{},{:.6f},{:.2f},{:.4f}\n", r.depth, r.median_ms, r.fps, r.speedup);
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

}  // namespace ctcprune::bench
