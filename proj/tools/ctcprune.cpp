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

// ctcprune: data generation, training, analysis, pruning, evaluation and
// benchmarking from the command line. Logs go to stderr; results go to files.
//
// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 numeric failure, 1 anything else.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "ctcprune/commands.hpp"
#include "ctcprune/error.hpp"
#include "ctcprune/runtime.hpp"

namespace cmd = ctcprune::commands;
using ctcprune::ExperimentConfig;

namespace {

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kNumericExit = 4;

ExperimentConfig load_config(const std::string& path, std::size_t jobs) {
  ExperimentConfig c = path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
  if (jobs > 0) c.jobs = jobs;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  ctcprune::keep_heap_resident();
  spdlog::set_default_logger(spdlog::stderr_color_st("ctcprune"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");

  CLI::App app{"On-demand depth pruning for Transformer-CTC encoders"};
  app.require_subcommand(1);
  std::string config_path;
  std::size_t jobs = 0;
  bool verbose = false;
  app.add_option("--config", config_path, "experiment config file (key = value)");
  app.add_option("--jobs", jobs, "worker cap for parallel evaluation (overrides run.jobs)");
  app.add_flag("-v,--verbose", verbose, "debug logging");

  cmd::GenDataArgs gen;
  std::size_t val_size = 0;
  auto* gen_cmd = app.add_subcommand("gen-data", "write train/val/test splits");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "replace a non-empty output directory");
  gen_cmd->add_option("--val-size", val_size, "validation utterances (overrides data.val_size)");

  cmd::TrainArgs tr;
  std::string mode = "pruning-aware";
  std::size_t layers = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", tr.data_dir, "dataset directory from gen-data")->required();
  train_cmd->add_option("--mode", mode, "pruning-aware | baseline-A | baseline-B");
  train_cmd->add_option("--layers", layers, "depth (overrides model.layers)");
  train_cmd->add_option("--seed", seed, "init/shuffle/drop seed (overrides train.seed)")
      ->each([&](const std::string&) { seed_given = true; });
  train_cmd->add_option("--out", tr.out_prefix, "output prefix for .ckpt/.state/.loss.csv/.json")
      ->required();
  train_cmd->add_flag("--resume", tr.resume, "continue from <out>.state if present");

  cmd::AnalyzeArgs an;
  std::string an_subset;
  auto* analyze_cmd = app.add_subcommand("analyze", "SVCCA layer-similarity matrix");
  analyze_cmd->add_option("--checkpoint", an.checkpoint)->required();
  analyze_cmd->add_option("--data", an.data_dir)->required();
  analyze_cmd->add_option("--split", an.split, "dataset split")->capture_default_str();
  analyze_cmd->add_option("--subset", an_subset, "layers kept, e.g. {2,4}");
  analyze_cmd->add_option("--out", an.out_csv, "similarity CSV")->required();
  std::string dump_dir;
  analyze_cmd->add_option("--dump-dir", dump_dir, "also write per-layer activation dumps");

  cmd::PruneArgs pr;
  std::size_t target = 0;
  double val_fraction = 0.0;
  auto* prune_cmd = app.add_subcommand("prune", "depth pruning without fine-tuning");
  prune_cmd->add_option("--checkpoint", pr.checkpoint)->required();
  prune_cmd->add_option("--data", pr.data_dir)->required();
  prune_cmd->add_option("--strategy", pr.strategy, "intermediate | iterative")
      ->capture_default_str();
  prune_cmd->add_option("--target-depth", target, "smallest depth (default L/2)");
  prune_cmd->add_option("--val-fraction", val_fraction, "fraction of validation data to search on");
  prune_cmd->add_option("--out", pr.out_dir, "output directory")->required();

  cmd::EvalArgs ev;
  std::string ev_subset;
  std::vector<std::string> tags;
  auto* eval_cmd = app.add_subcommand("eval", "greedy-decoding token error rate");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--data", ev.data_dir)->required();
  eval_cmd->add_option("--split", ev.split, "dataset split")->capture_default_str();
  eval_cmd->add_option("--subset", ev_subset, "layers kept, e.g. {2,4} or 1-4");
  eval_cmd->add_option("--out", ev.out_json, "report JSON")->required();
  eval_cmd->add_option("--tag", tags, "key=value stored in the report");

  cmd::BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "decoding time per depth");
  bench_cmd->add_option("--checkpoint", be.checkpoint)->required();
  bench_cmd->add_option("--data", be.data_dir)->required();
  bench_cmd->add_option("--split", be.split, "dataset split")->capture_default_str();
  bench_cmd->add_option("--depths", be.depths, "depths to time (default 1..L)")->delimiter(',');
  bench_cmd->add_option("--out", be.out_csv, "CSV report")->required();

  std::string eval_dir, report_out;
  auto* report_cmd = app.add_subcommand("report", "depth-vs-TER CSV from tagged eval reports");
  report_cmd->add_option("--evals", eval_dir, "directory of eval JSON files")->required();
  report_cmd->add_option("--out", report_out, "CSV path")->required();

  std::string key;
  auto* config_cmd = app.add_subcommand("config", "print the resolved config or one key");
  config_cmd->add_option("--get", key, "key to print");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }
  if (verbose) spdlog::set_level(spdlog::level::debug);

  try {
    const ExperimentConfig config = load_config(config_path, jobs);
    if (*gen_cmd) {
      if (val_size > 0) gen.val_size = val_size;
      cmd::gen_data(config, gen);
    } else if (*train_cmd) {
      tr.mode = ctcprune::parse_train_mode(mode);
      if (layers > 0) tr.layers = layers;
      if (seed_given) tr.seed = seed;
      cmd::train_model(config, tr);
    } else if (*analyze_cmd) {
      if (!an_subset.empty()) an.subset = an_subset;
      if (!dump_dir.empty()) an.dump_dir = dump_dir;
      cmd::analyze(config, an);
    } else if (*prune_cmd) {
      ExperimentConfig c = config;
      if (val_fraction > 0.0) c.prune_val_fraction = val_fraction;
      if (target > 0) pr.target_depth = target;
      cmd::prune_model(c, pr);
    } else if (*eval_cmd) {
      if (!ev_subset.empty()) ev.subset = ev_subset;
      for (const auto& t : tags) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ctcprune::ConfigError("--tag expects key=value: " + t);
        ev.tags[t.substr(0, eq)] = t.substr(eq + 1);
      }
      const auto r = cmd::eval_model(config, ev);
      spdlog::info("TER {:.4f} over {} utterances", r.ter, r.utterances);
    } else if (*bench_cmd) {
      cmd::bench_model(config, be);
    } else if (*report_cmd) {
      cmd::report(config, eval_dir, report_out);
    } else if (*config_cmd) {
      std::cout << (key.empty() ? config.to_text() : config.get(key) + "\n");
    }
  } catch (const ctcprune::ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return kConfigExit;
  } catch (const ctcprune::DataError& e) {
    spdlog::error("data error: {}", e.what());
    return kDataExit;
  } catch (const ctcprune::NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumericExit;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
