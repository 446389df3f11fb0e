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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctcprune/ctc.hpp"
#include "ctcprune/encoder.hpp"
#include "ctcprune/linalg.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune {

/// Stand-in for an acoustic corpus: every label is emitted as a run of
/// noisy one-hot frames, with a noisy blank frame separating equal
/// neighbours so targets are always CTC-feasible.
struct SyntheticTaskSpec {
  std::size_t vocab = 17;  // 16 labels + blank
  std::size_t input_dim = 16;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::size_t min_repeat = 1;
  std::size_t max_repeat = 3;
  double noise = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct Utterance {
  std::string id;
  Matrix features;  // T × input_dim
  ctc::LabelSequence labels;
};

using Dataset = std::vector<Utterance>;

/// One-hot embedding of a label: dimension (label - 1). Blank maps to zeros.
Matrix frame_pattern(const SyntheticTaskSpec& spec, int label);

/// Draws the label sequence (uniform length, uniform labels) and per-label
/// run lengths from `rng`, then renders frames with Gaussian noise.
Utterance generate_utterance(const SyntheticTaskSpec& spec, Rng& rng);
/// Renders given labels and run lengths; repeats.size() == labels.size().
Utterance render_utterance(const SyntheticTaskSpec& spec, const ctc::LabelSequence& labels,
                           std::span<const std::size_t> repeats, Rng& noise_rng);

/// `count` utterances from the stream rng_fork(spec.seed, "data/" + split),
/// with ids "<split>-<index>".
Dataset generate_dataset(const SyntheticTaskSpec& spec, const std::string& split,
                         std::size_t count);

// On-disk dataset: <dir>/manifest.json, <dir>/labels.txt ("<id> <tok> <tok>..."),
// <dir>/feats/<id>.pmat.
void save_dataset(const Dataset& data, const std::string& dir, const std::string& provenance);
Dataset load_dataset(const std::string& dir);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double clip_norm = 5.0;
  std::uint64_t seed = 11;

  void validate() const;
};

/// Linear warmup to `peak_lr`, then inverse-square-root decay. `step` is
/// 1-based.
double learning_rate(const TrainConfig& config, std::size_t step);

struct LossBreakdown {
  double total = 0.0;       // (1 - w) · final + w · inter, batch mean
  double final_loss = 0.0;  // batch mean CTC loss at the last layer
  double inter_loss = 0.0;  // batch mean of the averaged tap losses (0 without taps)
};

/// Combined objective over a batch with one train-mode forward per
/// utterance. Gradients of the batch-mean loss are accumulated (+=) into the
/// model's parameter grads. `drop_rng` drives the stochastic depth draws.
LossBreakdown combined_loss(EncoderModel& model, std::span<const Utterance* const> batch,
                            Rng& drop_rng);

struct AdamState {
  std::size_t step = 0;
  std::vector<Matrix> m;
  std::vector<Matrix> v;

  static AdamState create(const EncoderModel& model);
};

struct LossCurveRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double inter_loss = 0.0;
  double final_loss = 0.0;
};

/// Training state persisted at epoch boundaries so a run can resume exactly.
struct TrainState {
  std::size_t epochs_done = 0;
  AdamState adam;
};

struct TrainOptions {
  /// When set, `<prefix>.ckpt` and `<prefix>.state` are written after each epoch.
  std::optional<std::string> checkpoint_prefix;
  /// Resume point; the model passed to train() must hold the matching weights.
  std::optional<TrainState> resume;
  /// Stop after this many epochs in total (for interrupted-run tests).
  std::optional<std::size_t> stop_after_epochs;
  /// When set, loss-curve rows are appended after each epoch. A resumed run
  /// first drops rows past the resume step, so the file matches an
  /// uninterrupted run.
  std::optional<std::string> loss_curve_csv;
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  std::vector<LossCurveRow> curve;
  TrainState state;
};

/// Adam with warmup/inverse-sqrt schedule and global-norm clipping.
/// Deterministic for fixed (model seed, config seed, data). Throws
/// NumericError with step, lr and grad norm when the loss goes non-finite.
TrainResult train(EncoderModel& model, const Dataset& train_set, const TrainConfig& config,
                  const TrainOptions& options = {});

void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path);

void write_loss_curve_csv(const std::vector<LossCurveRow>& curve, const std::string& path);

struct EvalReport {
  double ter = 0.0;  // total edits / total reference labels
  double mean_loss = 0.0;
  std::size_t utterances = 0;
  std::size_t edits = 0;
  std::size_t reference_labels = 0;
};

/// Greedy-decoding evaluation of the sub-model `subset`; rng-free.
EvalReport evaluate(const EncoderModel& model, const Dataset& data, const LayerSubset& subset);
EvalReport evaluate(const EncoderModel& model, const Dataset& data);

/// Accumulates per-utterance results in a fixed order.
class EvalAccumulator {
 public:
  void add(const ctc::LabelSequence& hypothesis, const ctc::LabelSequence& reference,
           double loss);
  EvalReport report() const;

 private:
  std::size_t utterances_ = 0;
  std::size_t edits_ = 0;
  std::size_t reference_labels_ = 0;
  double loss_sum_ = 0.0;
};

}  // namespace ctcprune
