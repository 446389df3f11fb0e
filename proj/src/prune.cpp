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

#include "ctcprune/prune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctcprune/ctc.hpp"
#include "ctcprune/error.hpp"
#include "ctcprune/parallel.hpp"

namespace ctcprune::prune {

bool better(const CandidateScore& a, const CandidateScore& b) {
  if (a.ter != b.ter) return a.ter < b.ter;
  if (a.loss != b.loss) return a.loss < b.loss;
  return a.subset.indices() < b.subset.indices();
}

std::optional<CandidateScore> EvalCache::find(const LayerSubset& subset) const {
  std::lock_guard lock(mutex_);
  auto it = scores_.find(subset);
  if (it == scores_.end()) return std::nullopt;
  return it->second;
}

void EvalCache::insert(const CandidateScore& score) {
  std::lock_guard lock(mutex_);
  scores_.emplace(score.subset, score);
}

std::size_t EvalCache::size() const {
  std::lock_guard lock(mutex_);
  return scores_.size();
}

LayerSubset intermediate_prune(const EncoderModel& model, std::size_t k) {
  if (k < 1 || k > model.config.layers) {
    throw ConfigError(fmt::format("depth {} outside [1, {}]", k, model.config.layers));
  }
  return LayerSubset::prefix(k);
}

std::vector<CandidateScore> evaluate_with_prefixes(const EncoderModel& model,
                                                   const LayerSubset& subset, const Dataset& data,
                                                   EvalCache& cache) {
  subset.check_within(model.config.layers);
  const auto& idx = subset.indices();
  std::vector<EvalAccumulator> acc(idx.size());
  for (const auto& utt : data) {
    const ForwardTrace trace = forward(model, utt.features, subset);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Matrix logits = project_to_vocab(model, trace.outputs[idx[j]]);
      acc[j].add(ctc::greedy_decode(logits), utt.labels, ctc::ctc_forward(logits, utt.labels));
    }
  }
  cache.count_pass();
  std::vector<CandidateScore> out;
  out.reserve(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    const EvalReport r = acc[j].report();
    out.push_back({LayerSubset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(j) + 1}),
                   r.ter, r.mean_loss});
    cache.insert(out.back());
  }
  return out;
}

CandidateScore score_subset(const EncoderModel& model, const LayerSubset& subset,
                            const Dataset& data, EvalCache& cache) {
  if (auto hit = cache.find(subset)) return *hit;
  return evaluate_with_prefixes(model, subset, data, cache).back();
}

std::vector<LayerSubset> step_candidates(const LayerSubset& current) {
  const auto& idx = current.indices();
  if (idx.size() < 2) throw ConfigError("cannot prune below depth 1");
  std::vector<LayerSubset> out;
  for (std::size_t drop = 0; drop < idx.size(); ++drop) {
    std::vector<std::size_t> rest;
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (j != drop) rest.push_back(idx[j]);
    out.emplace_back(std::move(rest));
  }
  out.push_back(LayerSubset::prefix(idx.size() - 1));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

CandidateScore iterative_prune_step(const EncoderModel& model, const LayerSubset& current,
                                    const Dataset& data, EvalCache& cache, std::size_t jobs) {
  current.check_within(model.config.layers);
  const std::vector<LayerSubset> candidates = step_candidates(current);
  std::vector<CandidateScore> scores(candidates.size());
  parallel_for(candidates.size(), jobs, [&](std::size_t i) {
    scores[i] = score_subset(model, candidates[i], data, cache);
  });
  CandidateScore best = scores.front();
  for (const auto& s : scores)
    if (better(s, best)) best = s;
  spdlog::debug("depth {}: {} candidates, best {} ter {:.4f}", current.size() - 1,
                candidates.size(), best.subset.to_string(), best.ter);
  return best;
}

PruneSchedule run_iterative_prune(const EncoderModel& model, const Dataset& data,
                                  std::size_t target_depth, EvalCache& cache, std::size_t jobs) {
  const std::size_t layers = model.config.layers;
  if (target_depth < 1 || target_depth > layers) {
    throw ConfigError(fmt::format("target depth {} outside [1, {}]", target_depth, layers));
  }
  if (data.empty()) throw DataError("validation set is empty");
  PruneSchedule schedule;
  schedule.push_back(score_subset(model, LayerSubset::prefix(layers), data, cache));
  while (schedule.back().subset.size() > target_depth) {
    schedule.push_back(iterative_prune_step(model, schedule.back().subset, data, cache, jobs));
    const CandidateScore& chosen = schedule.back();
    const CandidateScore prefix =
        score_subset(model, LayerSubset::prefix(chosen.subset.size()), data, cache);
    if (chosen.ter > prefix.ter) {
      throw NumericError(fmt::format("search chose {} (TER {}) over the prefix {} (TER {})",
                                     chosen.subset.to_string(), chosen.ter,
                                     prefix.subset.to_string(), prefix.ter));
    }
  }
  return schedule;
}

PruneSchedule run_iterative_prune(const EncoderModel& model, const Dataset& data,
                                  std::size_t target_depth, std::size_t jobs) {
  EvalCache cache;
  return run_iterative_prune(model, data, target_depth, cache, jobs);
}

void write_schedule_json(const PruneSchedule& schedule, const std::string& path,
                         const std::string& config_hash) {
  nlohmann::ordered_json doc;
  doc["config_hash"] = config_hash;
  auto& entries = doc["schedule"] = nlohmann::ordered_json::array();
  for (const auto& s : schedule) {
    nlohmann::ordered_json e;
    e["depth"] = s.subset.size();
    e["subset"] = s.subset.indices();
    e["ter"] = s.ter;
    e["loss"] = s.loss;
    entries.push_back(std::move(e));
  }
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << doc.dump(2) << '\n';
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

PruneSchedule read_schedule_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  PruneSchedule schedule;
  try {
    const auto doc = nlohmann::json::parse(in);
    for (const auto& e : doc.at("schedule")) {
      schedule.push_back({LayerSubset(e.at("subset").get<std::vector<std::size_t>>()),
                          e.at("ter").get<double>(), e.at("loss").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed schedule {}: {}", path, e.what()));
  }
  return schedule;
}

void export_submodel(const EncoderModel& model, const LayerSubset& subset,
                     const std::string& path) {
  save_checkpoint(induce_submodel(model, subset), path);
}

Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError(fmt::format("validation fraction {} outside (0, 1]", fraction));
  }
  if (fraction == 1.0) return data;
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size()))));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = rng_fork(seed, "val-fraction");
  std::shuffle(order.begin(), order.end(), rng.engine());
  order.resize(std::min(keep, order.size()));
  std::sort(order.begin(), order.end());
  Dataset out;
  for (std::size_t i : order) out.push_back(data[i]);
  return out;
}

}  // namespace ctcprune::prune
