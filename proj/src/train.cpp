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

#include "ctcprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ctcprune/error.hpp"

namespace ctcprune {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Synthetic task

void SyntheticTaskSpec::validate() const {
  if (vocab < 2) throw ConfigError("task vocabulary needs blank plus one label");
  if (vocab - 1 > input_dim) {
    throw ConfigError(fmt::format("{} labels cannot be one-hot embedded in {} input dimensions",
                                  vocab - 1, input_dim));
  }
  if (min_len < 1 || min_len > max_len) {
    throw ConfigError(fmt::format("bad target length range [{}, {}]", min_len, max_len));
  }
  if (min_repeat < 1 || min_repeat > max_repeat) {
    throw ConfigError(fmt::format("bad repeat range [{}, {}]", min_repeat, max_repeat));
  }
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise must be finite and >= 0");
}

Matrix frame_pattern(const SyntheticTaskSpec& spec, int label) {
  Matrix f(1, spec.input_dim);
  if (label != ctc::kBlank) f(0, static_cast<std::size_t>(label - 1)) = 1.0;
  return f;
}

Utterance render_utterance(const SyntheticTaskSpec& spec, const ctc::LabelSequence& labels,
                           std::span<const std::size_t> repeats, Rng& noise_rng) {
  if (repeats.size() != labels.size()) throw ConfigError("one repeat count per label required");
  std::vector<int> frames;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (i > 0 && labels[i] == labels[i - 1]) frames.push_back(ctc::kBlank);
    for (std::size_t r = 0; r < repeats[i]; ++r) frames.push_back(labels[i]);
  }
  Utterance u;
  u.labels = labels;
  u.features = Matrix(frames.size(), spec.input_dim);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const Matrix pattern = frame_pattern(spec, frames[t]);
    for (std::size_t d = 0; d < spec.input_dim; ++d) {
      const double n = spec.noise > 0.0 ? noise_rng.normal(0.0, spec.noise) : 0.0;
      u.features(t, d) = pattern(0, d) + n;
    }
  }
  return u;
}

Utterance generate_utterance(const SyntheticTaskSpec& spec, Rng& rng) {
  spec.validate();
  const auto length = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));
  ctc::LabelSequence labels(length);
  for (auto& l : labels) l = static_cast<int>(rng.integer(1, static_cast<std::int64_t>(spec.vocab) - 1));
  std::vector<std::size_t> repeats(length);
  for (auto& r : repeats) {
    r = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(spec.min_repeat),
                                             static_cast<std::int64_t>(spec.max_repeat)));
  }
  return render_utterance(spec, labels, repeats, rng);
}

Dataset generate_dataset(const SyntheticTaskSpec& spec, const std::string& split,
                         std::size_t count) {
  Rng rng = rng_fork(spec.seed, "data/" + split);
  Dataset data;
  data.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    data.push_back(generate_utterance(spec, rng));
    data.back().id = fmt::format("{}-{:06d}", split, i);
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& dir, const std::string& provenance) {
  fs::create_directories(fs::path(dir) / "feats");
  nlohmann::ordered_json manifest;
  manifest["format"] = "ctcprune-dataset-1";
  manifest["provenance"] = provenance;
  manifest["count"] = data.size();
  manifest["input_dim"] = data.empty() ? 0 : data.front().features.cols();
  auto& ids = manifest["utterances"] = nlohmann::ordered_json::array();
  std::ofstream labels(fs::path(dir) / "labels.txt");
  if (!labels) throw DataError(fmt::format("cannot write labels in {}", dir));
  for (const auto& u : data) {
    ids.push_back(u.id);
    labels << u.id;
    for (int l : u.labels) labels << ' ' << l;
    labels << '\n';
    save_matrix((fs::path(dir) / "feats" / (u.id + ".pmat")).string(), u.features);
  }
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out || !labels) throw DataError(fmt::format("failed writing dataset {}", dir));
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw DataError(fmt::format("no dataset manifest in {}", dir));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed manifest in {}: {}", dir, e.what()));
  }
  std::ifstream lf(fs::path(dir) / "labels.txt");
  if (!lf) throw DataError(fmt::format("no labels.txt in {}", dir));
  std::vector<std::pair<std::string, ctc::LabelSequence>> labels;
  std::string line;
  while (std::getline(lf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    ctc::LabelSequence seq;
    int tok;
    while (ls >> tok) seq.push_back(tok);
    labels.emplace_back(id, std::move(seq));
  }
  const auto& ids = manifest.at("utterances");
  if (ids.size() != labels.size()) {
    throw DataError(fmt::format("manifest lists {} utterances, labels.txt has {}", ids.size(),
                                labels.size()));
  }
  Dataset data;
  data.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const std::string id = ids[i].get<std::string>();
    if (labels[i].first != id) {
      throw DataError(fmt::format("labels.txt line {} has id {}, manifest has {}", i + 1,
                                  labels[i].first, id));
    }
    Utterance u;
    u.id = id;
    u.labels = std::move(labels[i].second);
    u.features = load_matrix((fs::path(dir) / "feats" / (id + ".pmat")).string());
    data.push_back(std::move(u));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Objective

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1 || warmup_steps < 1) {
    throw ConfigError("epochs, batch size and warmup steps must be positive");
  }
  if (!(peak_lr >= 0.0) || !(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0) ||
      !(eps > 0.0) || !(clip_norm > 0.0)) {
    throw ConfigError("learning rate, Adam moments, epsilon and clip norm out of range");
  }
}

double learning_rate(const TrainConfig& config, std::size_t step) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

LossBreakdown combined_loss(EncoderModel& model, std::span<const Utterance* const> batch,
                            Rng& drop_rng) {
  const EncoderConfig& cfg = model.config;
  const double w = cfg.inter_weight;
  if (w > 0.0 && cfg.taps.empty()) {
    throw ConfigError("intermediate loss weight is positive but no tap positions are set");
  }
  if (batch.empty()) throw ConfigError("empty batch");
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const double inv_taps = cfg.taps.empty() ? 0.0 : 1.0 / static_cast<double>(cfg.taps.size());
  const LayerSubset all = LayerSubset::prefix(cfg.layers);

  LossBreakdown sum;
  for (const Utterance* utt : batch) {
    nn::Tape tape;
    TapedTrace trace = forward_taped(model, tape, utt->features, all, &drop_rng);
    std::vector<nn::Var> terms;
    std::vector<double> weights;

    nn::Var final_logits = project_to_vocab(model, tape, trace.outputs.back());
    nn::Var final_loss = ctc::ctc_loss(tape, final_logits, utt->labels);
    const double final_value = tape.value(final_loss)(0, 0);
    if (w < 1.0) {
      terms.push_back(final_loss);
      weights.push_back((1.0 - w) * inv_batch);
    }
    double inter_value = 0.0;
    for (std::size_t tap : cfg.taps) {
      nn::Var logits = project_to_vocab(model, tape, trace.outputs[tap]);
      nn::Var loss = ctc::ctc_loss(tape, logits, utt->labels);
      inter_value += tape.value(loss)(0, 0);
      if (w > 0.0) {
        terms.push_back(loss);
        weights.push_back(w * inv_taps * inv_batch);
      }
    }
    inter_value *= inv_taps;

    nn::Var total = nn::weighted_sum(tape, terms, weights);
    tape.backward(total);

    sum.final_loss += final_value;
    sum.inter_loss += inter_value;
    sum.total += (1.0 - w) * final_value + w * inter_value;
  }
  sum.total *= inv_batch;
  sum.final_loss *= inv_batch;
  sum.inter_loss *= inv_batch;
  return sum;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::create(const EncoderModel& model) {
  AdamState s;
  for (const auto* p : model.params()) {
    s.m.emplace_back(p->value.rows(), p->value.cols());
    s.v.emplace_back(p->value.rows(), p->value.cols());
  }
  return s;
}

namespace {

double global_grad_norm(const EncoderModel& model) {
  double acc = 0.0;
  for (const auto* p : model.params())
    for (double g : p->grad.data()) acc += g * g;
  return std::sqrt(acc);
}

void adam_update(EncoderModel& model, AdamState& state, const TrainConfig& cfg, double lr,
                 double grad_scale) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  auto ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& value = ps[i]->value.data();
    const auto& grad = ps[i]->grad.data();
    auto& m = state.m[i].data();
    auto& v = state.v[i].data();
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j] * grad_scale;
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / bias1;
      const double vhat = v[j] / bias2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

constexpr char kCurveHeader[] = "step,lr,loss,inter_loss,final_loss";

std::string curve_row(const LossCurveRow& r) {
  return fmt::format("{},{},{},{},{}\n", r.step, r.lr, r.loss, r.inter_loss, r.final_loss);
}

void start_loss_curve(const std::string& path, const TrainState& state) {
  std::vector<std::string> kept;
  if (state.epochs_done > 0) {
    std::ifstream in(path);
    if (!in) throw DataError(fmt::format("cannot resume loss curve {}: file missing", path));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoull(line.substr(0, line.find(','))) > state.adam.step) break;
      kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << kCurveHeader << '\n';
  for (const auto& l : kept) out << l << '\n';
}

void append_loss_curve(const std::string& path, std::span<const LossCurveRow> rows) {
  std::ofstream out(path, std::ios::app);
  for (const auto& r : rows) out << curve_row(r);
  if (!out) throw DataError(fmt::format("failed appending to {}", path));
}

}  // namespace

TrainResult train(EncoderModel& model, const Dataset& train_set, const TrainConfig& config,
                  const TrainOptions& options) {
  config.validate();
  model.config.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  TrainResult result;
  result.state = options.resume.value_or(TrainState{0, AdamState::create(model)});
  if (result.state.adam.m.size() != model.params().size()) {
    throw DataError("resume state does not match the model's parameter list");
  }
  const std::size_t last_epoch =
      std::min(config.epochs, options.stop_after_epochs.value_or(config.epochs));

  if (options.loss_curve_csv) start_loss_curve(*options.loss_curve_csv, result.state);

  std::vector<std::size_t> order(train_set.size());
  std::vector<const Utterance*> batch;
  for (std::size_t epoch = result.state.epochs_done; epoch < last_epoch; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = rng_fork(config.seed, fmt::format("shuffle/{}", epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    Rng drop_rng = rng_fork(config.seed, fmt::format("drop/{}", epoch));

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_set[order[i]]);

      model.zero_grad();
      const std::size_t step = result.state.adam.step + 1;
      const double lr = learning_rate(config, step);
      LossBreakdown loss;
      try {
        loss = combined_loss(model, batch, drop_rng);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("{} at step {} (lr {}, grad norm {})", e.what(), step, lr,
                                       global_grad_norm(model)));
      }
      const double norm = global_grad_norm(model);
      if (!std::isfinite(loss.total) || !std::isfinite(norm)) {
        throw NumericError(fmt::format(
            "non-finite training loss at step {} (lr {}, grad norm {}, loss {})", step, lr, norm,
            loss.total));
      }
      const double grad_scale = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      adam_update(model, result.state.adam, config, lr, grad_scale);
      result.curve.push_back({step, lr, loss.total, loss.inter_loss, loss.final_loss});
      epoch_loss += loss.total;
      ++epoch_batches;
    }
    result.state.epochs_done = epoch + 1;
    const double mean = epoch_loss / static_cast<double>(epoch_batches);
    spdlog::debug("epoch {} mean loss {:.5f}", epoch + 1, mean);
    if (options.checkpoint_prefix) {
      save_checkpoint(model, *options.checkpoint_prefix + ".ckpt");
      save_train_state(result.state, *options.checkpoint_prefix + ".state");
    }
    if (options.loss_curve_csv) {
      append_loss_curve(*options.loss_curve_csv,
                        std::span(result.curve).subspan(result.curve.size() - epoch_batches));
    }
    if (options.on_epoch) options.on_epoch(epoch + 1, mean);
  }
  return result;
}

namespace {

constexpr char kStateMagic[4] = {'P', 'T', 'R', 'S'};
constexpr std::uint32_t kStateVersion = 1;

}  // namespace

void save_train_state(const TrainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out.write(kStateMagic, 4);
  auto put64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  out.write(reinterpret_cast<const char*>(&kStateVersion), 4);
  put64(state.epochs_done);
  put64(state.adam.step);
  put64(state.adam.m.size());
  for (const auto& m : state.adam.m) write_matrix(out, m);
  for (const auto& v : state.adam.v) write_matrix(out, v);
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

TrainState load_train_state(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw DataError(fmt::format("bad magic: {} is not a training state file", path));
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (!in || version != kStateVersion) {
    throw DataError(fmt::format("training state version mismatch in {}", path));
  }
  auto get64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError(fmt::format("truncated training state {}", path));
    return v;
  };
  TrainState s;
  s.epochs_done = get64();
  s.adam.step = get64();
  const auto count = get64();
  if (count > (1u << 20)) throw DataError("implausible training state record count");
  for (std::uint64_t i = 0; i < count; ++i) s.adam.m.push_back(read_matrix(in));
  for (std::uint64_t i = 0; i < count; ++i) s.adam.v.push_back(read_matrix(in));
  return s;
}

void write_loss_curve_csv(const std::vector<LossCurveRow>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << kCurveHeader << '\n';
  for (const auto& r : curve) out << curve_row(r);
}

// ---------------------------------------------------------------------------
// Evaluation

void EvalAccumulator::add(const ctc::LabelSequence& hypothesis,
                          const ctc::LabelSequence& reference, double loss) {
  ++utterances_;
  edits_ += ctc::edit_distance(hypothesis, reference);
  reference_labels_ += reference.size();
  loss_sum_ += loss;
}

EvalReport EvalAccumulator::report() const {
  EvalReport r;
  r.utterances = utterances_;
  r.edits = edits_;
  r.reference_labels = reference_labels_;
  r.ter = reference_labels_ == 0 ? 0.0
                                 : static_cast<double>(edits_) / static_cast<double>(reference_labels_);
  r.mean_loss = utterances_ == 0 ? 0.0 : loss_sum_ / static_cast<double>(utterances_);
  return r;
}

EvalReport evaluate(const EncoderModel& model, const Dataset& data, const LayerSubset& subset) {
  EvalAccumulator acc;
  for (const auto& utt : data) {
    const ForwardTrace trace = forward(model, utt.features, subset);
    const Matrix logits = project_to_vocab(model, trace.outputs.back());
    acc.add(ctc::greedy_decode(logits), utt.labels, ctc::ctc_forward(logits, utt.labels));
  }
  return acc.report();
}

EvalReport evaluate(const EncoderModel& model, const Dataset& data) {
  return evaluate(model, data, LayerSubset::prefix(model.config.layers));
}

}  // namespace ctcprune
