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

// The pipeline steps behind each CLI subcommand. Every step is a function of
// its configuration and input files only, and stamps the configuration hash
// into what it writes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctcprune/bench.hpp"
#include "ctcprune/experiment.hpp"
#include "ctcprune/prune.hpp"
#include "ctcprune/train.hpp"

namespace ctcprune::commands {

/// Loads <data_dir>/<split>.
Dataset load_split(const std::string& data_dir, const std::string& split);

/// "{2,4}", "2,4" or "1-4".
LayerSubset parse_subset(const std::string& text);

struct GenDataArgs {
  std::string out_dir;
  bool force = false;
  std::optional<std::size_t> val_size;
};
/// Writes train/, val/ and test/ under out_dir, each from its own stream.
void gen_data(const ExperimentConfig& config, const GenDataArgs& args);

struct TrainArgs {
  std::string data_dir;
  TrainMode mode = TrainMode::kPruningAware;
  std::optional<std::size_t> layers;
  std::optional<std::uint64_t> seed;
  std::string out_prefix;  // writes <prefix>.ckpt, .state, .loss.csv, .json
  bool resume = false;
};
EvalReport train_model(const ExperimentConfig& config, const TrainArgs& args);

struct AnalyzeArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "val";
  std::optional<std::string> subset;
  std::string out_csv;
  std::optional<std::string> dump_dir;
};
Matrix analyze(const ExperimentConfig& config, const AnalyzeArgs& args);

struct PruneArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string strategy = "iterative";  // or "intermediate"
  std::optional<std::size_t> target_depth;
  std::string out_dir;  // schedule.json + depth_<k>.ckpt per entry
};
prune::PruneSchedule prune_model(const ExperimentConfig& config, const PruneArgs& args);

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::optional<std::string> subset;
  std::string out_json;
  std::map<std::string, std::string> tags;
};
EvalReport eval_model(const ExperimentConfig& config, const EvalArgs& args);

struct BenchArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string split = "test";
  std::vector<std::size_t> depths;  // empty means 1..L
  std::string out_csv;
};
bench::BenchReport bench_model(const ExperimentConfig& config, const BenchArgs& args);

/// Collects every eval JSON under eval_dir that carries `curve` and `seed`
/// tags and writes `curve,depth,ter` (mean over seeds) to out_csv and the
/// per-seed rows to <out_csv stem>_seeds.csv.
void report(const ExperimentConfig& config, const std::string& eval_dir,
            const std::string& out_csv);

}  // namespace ctcprune::commands
