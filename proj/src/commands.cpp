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

#include "ctcprune/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctcprune/bench.hpp"
#include "ctcprune/error.hpp"
#include "ctcprune/svcca.hpp"

namespace ctcprune::commands {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_json(const json& doc, const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << doc.dump(2) << '\n';
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

void ensure_parent(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
}

std::string hex(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::string file_name(const std::string& path) { return fs::path(path).filename().string(); }

json report_json(const EvalReport& r) {
  json j;
  j["ter"] = r.ter;
  j["mean_loss"] = r.mean_loss;
  j["utterances"] = r.utterances;
  j["edits"] = r.edits;
  j["reference_labels"] = r.reference_labels;
  return j;
}

}  // namespace

Dataset load_split(const std::string& data_dir, const std::string& split) {
  return load_dataset((fs::path(data_dir) / split).string());
}

LayerSubset parse_subset(const std::string& text) {
  std::string body;
  for (char c : text)
    if (c != '{' && c != '}' && c != ' ') body += c;
  if (const auto dash = body.find('-'); dash != std::string::npos) {
    try {
      const std::size_t lo = std::stoul(body.substr(0, dash));
      const std::size_t hi = std::stoul(body.substr(dash + 1));
      if (lo != 1) throw ConfigError(fmt::format("range subsets must start at 1: '{}'", text));
      return LayerSubset::prefix(hi);
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("bad subset '{}'", text));
    }
  }
  std::vector<std::size_t> idx;
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto comma = body.find(',', pos);
    const std::string item = body.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      idx.push_back(std::stoul(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("bad subset '{}'", text));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (idx.empty()) throw ConfigError(fmt::format("empty subset '{}'", text));
  return LayerSubset(std::move(idx));
}

void gen_data(const ExperimentConfig& config, const GenDataArgs& args) {
  const fs::path dir(args.out_dir);
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!args.force) {
      throw DataError(fmt::format("{} exists and is not empty (use --force to replace it)",
                                  args.out_dir));
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  const std::string hash = config.hash();
  const std::pair<const char*, std::size_t> splits[] = {
      {"train", config.train_size},
      {"val", args.val_size.value_or(config.val_size)},
      {"test", config.test_size}};
  json manifest;
  manifest["config_hash"] = hash;
  for (const auto& [split, count] : splits) {
    if (count == 0) throw ConfigError(fmt::format("split {} would be empty", split));
    const Dataset data = generate_dataset(config.task, split, count);
    save_dataset(data, (dir / split).string(),
                 fmt::format("config_hash={} split={} task_seed={}", hash, split, config.task.seed));
    manifest["splits"][split] = count;
    spdlog::info("wrote {} {} utterances", count, split);
  }
  std::ofstream(dir / "config.txt") << config.to_text();
  write_json(manifest, (dir / "data.json").string());
}

EvalReport train_model(const ExperimentConfig& config, const TrainArgs& args) {
  const std::size_t layers = args.layers.value_or(config.layers);
  const std::uint64_t seed = args.seed.value_or(config.train.seed);
  const EncoderConfig ecfg = config.encoder_config(args.mode, layers, seed);
  const TrainConfig tcfg = config.train_config(seed);
  const Dataset train_set = load_split(args.data_dir, "train");
  const Dataset val = load_split(args.data_dir, "val");
  ensure_parent(args.out_prefix);

  const std::string ckpt = args.out_prefix + ".ckpt";
  const std::string state = args.out_prefix + ".state";
  TrainOptions options;
  options.checkpoint_prefix = args.out_prefix;
  options.loss_curve_csv = args.out_prefix + ".loss.csv";
  options.on_epoch = [&](std::size_t epoch, double loss) {
    spdlog::info("{} L={} seed={} epoch {}/{} loss {:.4f}", to_string(args.mode), layers, seed,
                 epoch, tcfg.epochs, loss);
  };

  EncoderModel model;
  if (args.resume && fs::exists(state)) {
    model = load_checkpoint(ckpt);
    if (!(model.config == ecfg)) {
      throw ConfigError(fmt::format("{} was trained with a different model configuration", ckpt));
    }
    options.resume = load_train_state(state);
    spdlog::info("resuming {} after epoch {}", ckpt, options.resume->epochs_done);
  } else {
    model = EncoderModel::create(ecfg);
  }
  const TrainResult result = train(model, train_set, tcfg, options);
  if (result.state.epochs_done < tcfg.epochs) {
    throw NumericError("training stopped before the configured number of epochs");
  }

  const EvalReport val_report = evaluate(model, val);
  json summary;
  summary["config_hash"] = config.hash();
  summary["mode"] = to_string(args.mode);
  summary["layers"] = layers;
  summary["seed"] = seed;
  summary["taps"] = ecfg.taps;
  summary["inter_weight"] = ecfg.inter_weight;
  summary["keep_prob"] = ecfg.keep_prob;
  summary["epochs"] = result.state.epochs_done;
  summary["steps"] = result.state.adam.step;
  summary["parameter_hash"] = hex(model.parameter_hash());
  summary["val"] = report_json(val_report);
  write_json(summary, args.out_prefix + ".json");
  spdlog::info("{} L={} seed={} val TER {:.4f}", to_string(args.mode), layers, seed, val_report.ter);
  return val_report;
}

Matrix analyze(const ExperimentConfig& config, const AnalyzeArgs& args) {
  const EncoderModel model = load_checkpoint(args.checkpoint);
  const Dataset data = load_split(args.data_dir, args.split);
  const LayerSubset subset =
      args.subset ? parse_subset(*args.subset) : LayerSubset::prefix(model.config.layers);
  const svcca::ActivationSet acts = svcca::collect_activations(
      model, data, subset, {config.analyze_max_frames, config.analyze_seed});
  const Matrix sim = svcca::similarity_matrix(acts.dumps, config.jobs);
  ensure_parent(args.out_csv);
  svcca::write_similarity_csv(sim, acts.dumps, args.out_csv);
  if (args.dump_dir) svcca::save_activation_dumps(acts, *args.dump_dir, config.hash());

  json meta;
  meta["config_hash"] = config.hash();
  meta["checkpoint"] = file_name(args.checkpoint);
  meta["parameter_hash"] = hex(model.parameter_hash());
  meta["split"] = args.split;
  meta["subset"] = subset.indices();
  meta["frames"] = acts.dumps.front().activations.rows();
  meta["total_frames"] = acts.total_frames;
  meta["subsample_stride"] = acts.stride;
  meta["subsample_offset"] = acts.offset;
  write_json(meta, args.out_csv + ".json");
  return sim;
}

prune::PruneSchedule prune_model(const ExperimentConfig& config, const PruneArgs& args) {
  const EncoderModel model = load_checkpoint(args.checkpoint);
  const std::size_t layers = model.config.layers;
  const std::size_t target = args.target_depth.value_or(
      config.prune_target_depth == 0 ? std::max<std::size_t>(1, layers / 2)
                                     : config.prune_target_depth);
  const Dataset val = prune::subsample(load_split(args.data_dir, "val"),
                                       config.prune_val_fraction, config.prune_seed);
  const std::uint64_t before = model.parameter_hash();

  prune::PruneSchedule schedule;
  prune::EvalCache cache;
  if (args.strategy == "iterative") {
    schedule = prune::run_iterative_prune(model, val, target, cache, config.jobs);
  } else if (args.strategy == "intermediate") {
    if (target < 1 || target > layers) {
      throw ConfigError(fmt::format("target depth {} outside [1, {}]", target, layers));
    }
    for (std::size_t k = layers; k >= target; --k) {
      schedule.push_back(
          prune::score_subset(model, prune::intermediate_prune(model, k), val, cache));
    }
  } else {
    throw ConfigError(fmt::format("unknown strategy '{}' (expected intermediate or iterative)",
                                  args.strategy));
  }

  fs::create_directories(args.out_dir);
  for (const auto& entry : schedule) {
    prune::export_submodel(
        model, entry.subset,
        (fs::path(args.out_dir) / fmt::format("depth_{}.ckpt", entry.subset.size())).string());
  }
  prune::write_schedule_json(schedule, (fs::path(args.out_dir) / "schedule.json").string(),
                             config.hash());
  if (model.parameter_hash() != before) {
    throw std::logic_error("pruning modified the model parameters");
  }
  spdlog::info("{} pruning of {}: {} depths, {} evaluation passes", args.strategy,
               file_name(args.checkpoint), schedule.size(), cache.passes());
  return schedule;
}

EvalReport eval_model(const ExperimentConfig& config, const EvalArgs& args) {
  const EncoderModel model = load_checkpoint(args.checkpoint);
  const Dataset data = load_split(args.data_dir, args.split);
  const LayerSubset subset =
      args.subset ? parse_subset(*args.subset) : LayerSubset::prefix(model.config.layers);
  const EvalReport r = evaluate(model, data, subset);
  json doc;
  doc["config_hash"] = config.hash();
  doc["checkpoint"] = file_name(args.checkpoint);
  doc["parameter_hash"] = hex(model.parameter_hash());
  doc["split"] = args.split;
  doc["subset"] = subset.indices();
  doc["depth"] = subset.size();
  doc["report"] = report_json(r);
  json tags = json::object();
  for (const auto& [k, v] : args.tags) tags[k] = v;
  doc["tags"] = tags;
  write_json(doc, args.out_json);
  return r;
}

bench::BenchReport bench_model(const ExperimentConfig& config, const BenchArgs& args) {
  const EncoderModel model = load_checkpoint(args.checkpoint);
  const Dataset data = load_split(args.data_dir, args.split);
  std::vector<std::size_t> depths = args.depths;
  if (depths.empty())
    for (std::size_t k = 1; k <= model.config.layers; ++k) depths.push_back(k);
  const bench::BenchReport r =
      bench::benchmark_depths(model, data, depths, config.bench_reps, config.bench_warmup);
  ensure_parent(args.out_csv);
  bench::write_bench_csv(r, args.out_csv);
  json meta;
  meta["config_hash"] = config.hash();
  meta["checkpoint"] = file_name(args.checkpoint);
  meta["split"] = args.split;
  meta["reps"] = r.reps;
  meta["warmup"] = r.warmup;
  meta["utterances"] = r.utterances;
  meta["frames"] = r.frames;
  meta["threads"] = 1;
  if (config.jobs > 1) {
    json parallel;
    parallel["jobs"] = config.jobs;
    parallel["depths"] = depths;
    parallel["fps"] = bench::parallel_fps(model, data, depths, config.jobs, config.bench_reps);
    meta["parallel"] = parallel;
  }
  write_json(meta, args.out_csv + ".json");
  return r;
}

void report(const ExperimentConfig& config, const std::string& eval_dir,
            const std::string& out_csv) {
  struct Row {
    std::string curve;
    std::size_t depth;
    std::uint64_t seed;
    double ter;
  };
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(eval_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<Row> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
      const auto& tags = doc.at("tags");
      if (!tags.contains("curve") || !tags.contains("seed")) continue;
      rows.push_back({tags.at("curve").get<std::string>(), doc.at("depth").get<std::size_t>(),
                      std::stoull(tags.at("seed").get<std::string>()),
                      doc.at("report").at("ter").get<double>()});
    } catch (const std::exception& e) {
      throw DataError(fmt::format("malformed eval report {}: {}", f.string(), e.what()));
    }
  }
  if (rows.empty()) throw DataError(fmt::format("no tagged eval reports in {}", eval_dir));
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.curve, a.depth, a.seed) < std::tie(b.curve, b.depth, b.seed);
  });

  ensure_parent(out_csv);
  const fs::path p(out_csv);
  const std::string seeds_csv = (p.parent_path() / (p.stem().string() + "_seeds.csv")).string();
  std::ofstream seeds(seeds_csv);
  seeds << "curve,depth,seed,ter\n";
  for (const auto& r : rows) seeds << fmt::format("{},{},{},{:.6f}\n", r.curve, r.depth, r.seed, r.ter);

  std::ofstream out(out_csv);
  out << "curve,depth,ter\n";
  for (std::size_t i = 0; i < rows.size();) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < rows.size() && rows[j].curve == rows[i].curve && rows[j].depth == rows[i].depth)
      sum += rows[j++].ter;
    out << fmt::format("{},{},{:.6f}\n", rows[i].curve, rows[i].depth,
                       sum / static_cast<double>(j - i));
    i = j;
  }
  if (!out || !seeds) throw DataError(fmt::format("failed writing {}", out_csv));
  json meta;
  meta["config_hash"] = config.hash();
  meta["reports"] = rows.size();
  write_json(meta, out_csv + ".json");
}

}  // namespace ctcprune::commands
