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

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ctcprune/commands.hpp"
#include "ctcprune/error.hpp"

using namespace ctcprune;
namespace cmd = ctcprune::commands;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(
# small enough to train in well under a second
task.vocab = 5
task.input_dim = 4
task.min_len = 1
task.max_len = 4
task.max_repeat = 2
data.train_size = 40
data.val_size = 16
data.test_size = 16
model.layers = 4
model.d_model = 8
model.d_ff = 16
model.heads = 2
train.epochs = 3
train.batch_size = 8
train.warmup_steps = 10
protocol.baseline_depths = 2,4
protocol.seeds = 1,2
)";

ExperimentConfig tiny() { return ExperimentConfig::parse(kTinyConfig); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ctcprune_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("config parses, round-trips and rejects bad input") {
  const ExperimentConfig c = tiny();
  CHECK(c.layers == 4);
  CHECK(c.task.vocab == 5);
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.get("model.d_ff") == "16");
  CHECK(c.get("protocol.baseline_depths") == "2,4");

  const ExperimentConfig again = ExperimentConfig::parse(c.to_text());
  CHECK(again.to_text() == c.to_text());
  CHECK(again.hash() == c.hash());
  CHECK(c.hash().size() == 16);
  CHECK(ExperimentConfig{}.hash() != c.hash());

  CHECK_THROWS_AS(ExperimentConfig::parse("model.layer = 4\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.layers = 4\nmodel.layers = 5\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.layers = four\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.layers\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.keep_prob = 0\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("model.d_model = 10\nmodel.heads = 4\n"), ConfigError);
  CHECK_THROWS_AS(c.get("nope"), ConfigError);
}

TEST_CASE("training modes map to encoder configurations") {
  const ExperimentConfig c = tiny();
  const EncoderConfig aware = c.encoder_config(TrainMode::kPruningAware, 8, 3);
  CHECK(aware.taps == std::vector<std::size_t>{2, 4});
  CHECK(aware.inter_weight == doctest::Approx(2.0 / 3.0));
  CHECK(aware.keep_prob == doctest::Approx(0.9));
  CHECK(aware.seed == 3);

  CHECK(c.encoder_config(TrainMode::kPruningAware, 4, 1).taps == std::vector<std::size_t>{1, 2});
  CHECK(c.encoder_config(TrainMode::kPruningAware, 2, 1).taps == std::vector<std::size_t>{1});
  CHECK(c.encoder_config(TrainMode::kPruningAware, 3, 1).taps == std::vector<std::size_t>{1});

  const EncoderConfig a = c.encoder_config(TrainMode::kBaselineA, 6, 1);
  CHECK(a.taps.empty());
  CHECK(a.inter_weight == 0.0);
  CHECK(a.keep_prob == 1.0);
  CHECK(c.encoder_config(TrainMode::kBaselineA, 1, 1).layers == 1);

  const EncoderConfig b = c.encoder_config(TrainMode::kBaselineB, 6, 1);
  CHECK(b.taps == std::vector<std::size_t>{3});
  CHECK(b.inter_weight == doctest::Approx(0.3));
  CHECK(b.keep_prob == doctest::Approx(0.9));

  CHECK_THROWS_AS(c.encoder_config(TrainMode::kPruningAware, 1, 1), ConfigError);
  CHECK_THROWS_AS(c.encoder_config(TrainMode::kBaselineB, 1, 1), ConfigError);
  CHECK(parse_train_mode("baseline-B") == TrainMode::kBaselineB);
  CHECK(to_string(TrainMode::kPruningAware) == "pruning-aware");
  CHECK_THROWS_AS(parse_train_mode("baseline-C"), ConfigError);
}

TEST_CASE("subset syntax") {
  CHECK(cmd::parse_subset("{2,4}").indices() == std::vector<std::size_t>{2, 4});
  CHECK(cmd::parse_subset("1, 3").indices() == std::vector<std::size_t>{1, 3});
  CHECK(cmd::parse_subset("1-3").indices() == std::vector<std::size_t>{1, 2, 3});
  CHECK_THROWS_AS(cmd::parse_subset("{}"), ConfigError);
  CHECK_THROWS_AS(cmd::parse_subset("2-4"), ConfigError);
  CHECK_THROWS_AS(cmd::parse_subset("1,x"), ConfigError);
  CHECK_THROWS(cmd::parse_subset("3,2"));
}

TEST_CASE("gen-data is deterministic and keeps splits apart") {
  const ExperimentConfig c = tiny();
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  cmd::gen_data(c, {a.string(), false, std::nullopt});
  cmd::gen_data(c, {b.string(), false, 7});

  for (const char* split : {"train", "test"}) {
    const Dataset x = cmd::load_split(a.string(), split);
    const Dataset y = cmd::load_split(b.string(), split);
    REQUIRE(x.size() == y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(x[i].id == y[i].id);
      CHECK(x[i].labels == y[i].labels);
    }
  }
  CHECK(cmd::load_split(a.string(), "val").size() == 16);
  CHECK(cmd::load_split(b.string(), "val").size() == 7);
  CHECK(read_json(a / "data.json")["config_hash"] == c.hash());

  std::set<std::string> ids;
  for (const char* split : {"train", "val", "test"})
    for (const auto& u : cmd::load_split(a.string(), split)) CHECK(ids.insert(u.id).second);

  CHECK_THROWS_AS(cmd::gen_data(c, {a.string(), false, std::nullopt}), DataError);
  cmd::gen_data(c, {a.string(), true, std::nullopt});
  CHECK_THROWS_AS(cmd::load_split((a / "missing").string(), "train"), DataError);
}

TEST_CASE("train writes artifacts and resume reproduces them byte for byte") {
  ExperimentConfig c = tiny();
  const fs::path root = scratch("train");
  cmd::gen_data(c, {(root / "data").string(), false, std::nullopt});
  const std::string data = (root / "data").string();

  cmd::TrainArgs full{data, TrainMode::kPruningAware, 4, 5, (root / "full").string(), false};
  cmd::train_model(c, full);
  for (const char* ext : {".ckpt", ".state", ".loss.csv", ".json"})
    CHECK(fs::exists(root / (std::string("full") + ext)));
  const auto summary = read_json(root / "full.json");
  CHECK(summary["mode"] == "pruning-aware");
  CHECK(summary["taps"] == nlohmann::json::array({1, 2}));
  CHECK(summary["epochs"] == 3);
  CHECK(summary["config_hash"] == c.hash());

  // Stop after one epoch, then resume with the full budget.
  ExperimentConfig short_run = c;
  short_run.train.epochs = 1;
  cmd::TrainArgs part{data, TrainMode::kPruningAware, 4, 5, (root / "part").string(), false};
  cmd::train_model(short_run, part);
  part.resume = true;
  cmd::train_model(c, part);
  CHECK(slurp(root / "part.ckpt") == slurp(root / "full.ckpt"));
  CHECK(slurp(root / "part.loss.csv") == slurp(root / "full.loss.csv"));
  CHECK(slurp(root / "part.state") == slurp(root / "full.state"));

  // A resume against a different geometry is refused.
  cmd::TrainArgs wrong = part;
  wrong.mode = TrainMode::kBaselineB;
  CHECK_THROWS_AS(cmd::train_model(c, wrong), ConfigError);
}

TEST_CASE("prune, eval and report") {
  const ExperimentConfig c = tiny();
  const fs::path root = scratch("pipeline");
  const std::string data = (root / "data").string();
  cmd::gen_data(c, {data, false, std::nullopt});

  for (std::uint64_t seed : {1, 2}) {
    const std::string prefix = (root / ("aware-s" + std::to_string(seed))).string();
    cmd::train_model(c, {data, TrainMode::kPruningAware, 4, seed, prefix, false});
    const EncoderModel model = load_checkpoint(prefix + ".ckpt");

    const auto inter = cmd::prune_model(
        c, {prefix + ".ckpt", data, "intermediate", std::nullopt, prefix + "_inter"});
    REQUIRE(inter.size() == 3);
    for (std::size_t k = 2; k <= 4; ++k) {
      const fs::path ckpt = fs::path(prefix + "_inter") / ("depth_" + std::to_string(k) + ".ckpt");
      REQUIRE(fs::exists(ckpt));
      CHECK(load_checkpoint(ckpt.string()).config.layers == k);
    }
    CHECK(load_checkpoint(prefix + ".ckpt").parameter_hash() == model.parameter_hash());

    const auto iter =
        cmd::prune_model(c, {prefix + ".ckpt", data, "iterative", 3, prefix + "_iter"});
    REQUIRE(iter.size() == 2);
    CHECK(iter.back().subset.size() == 3);
    CHECK(read_json(fs::path(prefix + "_iter") / "schedule.json")["schedule"].size() == 2);
    CHECK_THROWS_AS(
        cmd::prune_model(c, {prefix + ".ckpt", data, "greedy", std::nullopt, prefix + "_x"}),
        ConfigError);

    // Evaluating an exported depth-k model matches evaluating the subset in place.
    const EvalReport exported = cmd::eval_model(
        c, {(fs::path(prefix + "_inter") / "depth_2.ckpt").string(), data, "test", std::nullopt,
            (root / "eval" / ("d2-s" + std::to_string(seed) + ".json")).string(),
            {{"curve", "aware"}, {"seed", std::to_string(seed)}}});
    const EvalReport in_place = cmd::eval_model(
        c, {prefix + ".ckpt", data, "test", std::string("1-2"),
            (root / "untagged" / ("s" + std::to_string(seed) + ".json")).string(), {}});
    CHECK(exported.ter == in_place.ter);
    CHECK(exported.mean_loss == doctest::Approx(in_place.mean_loss).epsilon(1e-12));
  }

  const auto doc = read_json(root / "eval" / "d2-s1.json");
  CHECK(doc["depth"] == 2);
  CHECK(doc["checkpoint"] == "depth_2.ckpt");
  CHECK(doc["tags"]["curve"] == "aware");

  const fs::path csv = root / "fig.csv";
  cmd::report(c, (root / "eval").string(), csv.string());
  const double t1 = read_json(root / "eval" / "d2-s1.json")["report"]["ter"];
  const double t2 = read_json(root / "eval" / "d2-s2.json")["report"]["ter"];
  CHECK(slurp(csv) == fmt::format("curve,depth,ter\naware,2,{:.6f}\n", (t1 + t2) / 2.0));
  CHECK(slurp(root / "fig_seeds.csv") ==
        fmt::format("curve,depth,seed,ter\naware,2,1,{:.6f}\naware,2,2,{:.6f}\n", t1, t2));
  CHECK_THROWS_AS(cmd::report(c, (root / "untagged").string(), (root / "u.csv").string()),
                  DataError);
}

TEST_CASE("analyze and bench write their reports") {
  ExperimentConfig c = tiny();
  c.analyze_max_frames = 100;
  const fs::path root = scratch("analyze");
  const std::string data = (root / "data").string();
  cmd::gen_data(c, {data, false, std::nullopt});
  const std::string prefix = (root / "m").string();
  cmd::train_model(c, {data, TrainMode::kBaselineA, 2, 1, prefix, false});

  const Matrix sim = cmd::analyze(
      c, {prefix + ".ckpt", data, "train", std::nullopt, (root / "sim.csv").string(), std::nullopt});
  CHECK(sim.rows() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(sim(i, i) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(fs::exists(root / "sim.csv.json"));

  const auto r =
      cmd::bench_model(c, {prefix + ".ckpt", data, "test", {1, 2}, (root / "bench.csv").string()});
  CHECK(r.rows.size() == 2);
  CHECK(slurp(root / "bench.csv").rfind("depth,median_ms,fps,speedup\n", 0) == 0);
}
