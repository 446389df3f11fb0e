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

#include "ctcprune/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ctcprune/error.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune {

TrainMode parse_train_mode(const std::string& text) {
  if (text == "pruning-aware") return TrainMode::kPruningAware;
  if (text == "baseline-A") return TrainMode::kBaselineA;
  if (text == "baseline-B") return TrainMode::kBaselineB;
  throw ConfigError(fmt::format(
      "unknown training mode '{}' (expected pruning-aware, baseline-A or baseline-B)", text));
}

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kPruningAware: return "pruning-aware";
    case TrainMode::kBaselineA: return "baseline-A";
    case TrainMode::kBaselineB: return "baseline-B";
  }
  return "unknown";
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("bad value '{}' for {}", value, key));
  }
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

struct Field {
  const char* key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> show;
};

template <class T>
Field number(const char* key, T& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); },
          [&ref] { return fmt::format("{}", ref); }};
}

template <class T>
Field list(const char* key, std::vector<T>& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_list<T>(key, v); },
          [&ref] { return fmt::format("{}", fmt::join(ref, ",")); }};
}

// Single source of truth for key names and order.
std::vector<Field> fields(ExperimentConfig& c) {
  return {
      number("task.vocab", c.task.vocab),
      number("task.input_dim", c.task.input_dim),
      number("task.min_len", c.task.min_len),
      number("task.max_len", c.task.max_len),
      number("task.min_repeat", c.task.min_repeat),
      number("task.max_repeat", c.task.max_repeat),
      number("task.noise", c.task.noise),
      number("task.seed", c.task.seed),
      number("data.train_size", c.train_size),
      number("data.val_size", c.val_size),
      number("data.test_size", c.test_size),
      number("model.layers", c.layers),
      number("model.d_model", c.d_model),
      number("model.d_ff", c.d_ff),
      number("model.heads", c.heads),
      number("model.keep_prob", c.keep_prob),
      number("model.aware_weight", c.aware_weight),
      number("model.baseline_b_weight", c.baseline_b_weight),
      number("train.epochs", c.train.epochs),
      number("train.batch_size", c.train.batch_size),
      number("train.peak_lr", c.train.peak_lr),
      number("train.warmup_steps", c.train.warmup_steps),
      number("train.beta1", c.train.beta1),
      number("train.beta2", c.train.beta2),
      number("train.eps", c.train.eps),
      number("train.clip_norm", c.train.clip_norm),
      number("train.seed", c.train.seed),
      number("analyze.max_frames", c.analyze_max_frames),
      number("analyze.seed", c.analyze_seed),
      number("prune.target_depth", c.prune_target_depth),
      number("prune.val_fraction", c.prune_val_fraction),
      number("prune.seed", c.prune_seed),
      number("bench.reps", c.bench_reps),
      number("bench.warmup", c.bench_warmup),
      number("run.jobs", c.jobs),
      list("protocol.baseline_depths", c.baseline_depths),
      list("protocol.seeds", c.seeds),
  };
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  auto table = fields(c);
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value', got '{}'", lineno, body));
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError(fmt::format("line {}: unknown key '{}'", lineno, key));
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ConfigError(fmt::format("line {}: duplicate key '{}'", lineno, key));
    }
    seen.push_back(key);
    it->set(value);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config {}", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
  auto table = fields(const_cast<ExperimentConfig&>(*this));
  std::string out;
  for (const auto& f : table) out += fmt::format("{} = {}\n", f.key, f.show());
  return out;
}

std::string ExperimentConfig::hash() const { return fmt::format("{:016x}", fnv1a64(to_text())); }

std::string ExperimentConfig::get(const std::string& key) const {
  auto table = fields(const_cast<ExperimentConfig&>(*this));
  for (const auto& f : table)
    if (key == f.key) return f.show();
  throw ConfigError(fmt::format("unknown key '{}'", key));
}

void ExperimentConfig::validate() const {
  task.validate();
  train.validate();
  if (train_size == 0 || val_size == 0 || test_size == 0) {
    throw ConfigError("every data split needs at least one utterance");
  }
  if (layers < 1) throw ConfigError("model.layers must be at least 1");
  if (prune_target_depth > layers) {
    throw ConfigError(fmt::format("prune.target_depth {} exceeds model.layers {}",
                                  prune_target_depth, layers));
  }
  if (!(prune_val_fraction > 0.0 && prune_val_fraction <= 1.0)) {
    throw ConfigError("prune.val_fraction must lie in (0, 1]");
  }
  if (bench_reps < 3) throw ConfigError("bench.reps must be at least 3");
  if (jobs < 1) throw ConfigError("run.jobs must be at least 1");
  if (seeds.empty()) throw ConfigError("protocol.seeds is empty");
  for (std::size_t d : baseline_depths)
    if (d < 1) throw ConfigError("protocol.baseline_depths entries must be positive");
  // Geometry checks shared with the encoder.
  encoder_config(TrainMode::kBaselineA, layers, 0).validate();
  if (!(aware_weight >= 0.0 && aware_weight <= 1.0) ||
      !(baseline_b_weight >= 0.0 && baseline_b_weight <= 1.0)) {
    throw ConfigError("loss weights must lie in [0, 1]");
  }
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("model.keep_prob must lie in (0, 1]");
}

std::size_t ExperimentConfig::target_depth() const {
  return prune_target_depth == 0 ? std::max<std::size_t>(1, layers / 2) : prune_target_depth;
}

EncoderConfig ExperimentConfig::encoder_config(TrainMode mode, std::size_t depth,
                                               std::uint64_t seed) const {
  EncoderConfig c;
  c.layers = depth;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.heads = heads;
  c.vocab = task.vocab;
  c.input_dim = task.input_dim;
  c.seed = seed;
  c.taps.clear();
  switch (mode) {
    case TrainMode::kPruningAware: {
      if (depth < 2) throw ConfigError("pruning-aware training needs at least 2 layers");
      for (std::size_t t : {depth / 4, depth / 2})
        if (t >= 1 && t < depth && (c.taps.empty() || c.taps.back() != t)) c.taps.push_back(t);
      c.inter_weight = aware_weight;
      c.keep_prob = keep_prob;
      break;
    }
    case TrainMode::kBaselineA:
      c.inter_weight = 0.0;
      c.keep_prob = 1.0;
      break;
    case TrainMode::kBaselineB:
      if (depth < 2) throw ConfigError("baseline-B training needs at least 2 layers");
      c.taps = {depth / 2};
      c.inter_weight = baseline_b_weight;
      c.keep_prob = keep_prob;
      break;
  }
  c.validate();
  return c;
}

TrainConfig ExperimentConfig::train_config(std::uint64_t seed) const {
  TrainConfig t = train;
  t.seed = seed;
  return t;
}

}  // namespace ctcprune
