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

#include "ctcprune/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "ctcprune/error.hpp"

namespace ctcprune {

// ---------------------------------------------------------------------------
// EncoderConfig

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder needs at least one layer");
  if (d_model < 2) throw ConfigError("model width must be at least 2");
  if (d_ff < 1) throw ConfigError("feed-forward width must be positive");
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError(fmt::format("model width {} is not divisible by {} heads", d_model, heads));
  }
  if (vocab < 2) throw ConfigError("vocabulary must hold blank plus at least one label");
  if (input_dim < 1) throw ConfigError("input dimension must be positive");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw ConfigError(fmt::format("keep probability {} outside (0, 1]", keep_prob));
  }
  if (!(inter_weight >= 0.0 && inter_weight <= 1.0)) {
    throw ConfigError(fmt::format("intermediate loss weight {} outside [0, 1]", inter_weight));
  }
  for (std::size_t i = 0; i < taps.size(); ++i) {
    if (taps[i] < 1 || taps[i] >= layers) {
      throw ConfigError(
          fmt::format("tap position {} outside [1, {}]", taps[i], layers == 0 ? 0 : layers - 1));
    }
    if (i > 0 && taps[i] <= taps[i - 1]) {
      throw ConfigError("tap positions must be strictly increasing");
    }
  }
}

std::string EncoderConfig::to_text() const {
  std::string out;
  out += fmt::format("layers={}\n", layers);
  out += fmt::format("d_model={}\n", d_model);
  out += fmt::format("d_ff={}\n", d_ff);
  out += fmt::format("heads={}\n", heads);
  out += fmt::format("vocab={}\n", vocab);
  out += fmt::format("input_dim={}\n", input_dim);
  out += fmt::format("keep_prob={}\n", keep_prob);
  out += fmt::format("taps={}\n", fmt::join(taps, ","));
  out += fmt::format("inter_weight={}\n", inter_weight);
  out += fmt::format("seed={}\n", seed);
  return out;
}

EncoderConfig EncoderConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(fmt::format("bad config line '{}'", line));
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(fmt::format("config block is missing '{}'", key));
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  EncoderConfig c;
  try {
    c.layers = std::stoull(take("layers"));
    c.d_model = std::stoull(take("d_model"));
    c.d_ff = std::stoull(take("d_ff"));
    c.heads = std::stoull(take("heads"));
    c.vocab = std::stoull(take("vocab"));
    c.input_dim = std::stoull(take("input_dim"));
    c.keep_prob = std::stod(take("keep_prob"));
    c.taps.clear();
    std::istringstream taps(take("taps"));
    std::string item;
    while (std::getline(taps, item, ','))
      if (!item.empty()) c.taps.push_back(std::stoull(item));
    c.inter_weight = std::stod(take("inter_weight"));
    c.seed = std::stoull(take("seed"));
  } catch (const std::logic_error& e) {
    throw DataError(fmt::format("malformed config block: {}", e.what()));
  }
  if (!kv.empty()) throw DataError(fmt::format("unknown config key '{}'", kv.begin()->first));
  return c;
}

// ---------------------------------------------------------------------------
// LayerSubset

LayerSubset::LayerSubset(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (indices_[i] < 1) throw ConfigError("layer indices are 1-based");
    if (i > 0 && indices_[i] <= indices_[i - 1]) {
      throw ConfigError(fmt::format("layer subset {} is not strictly increasing", to_string()));
    }
  }
}

LayerSubset LayerSubset::prefix(std::size_t k) {
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i + 1;
  return LayerSubset(std::move(idx));
}

bool LayerSubset::contains(std::size_t layer) const {
  return std::binary_search(indices_.begin(), indices_.end(), layer);
}

void LayerSubset::check_within(std::size_t layers) const {
  if (indices_.empty()) throw ConfigError("layer subset is empty");
  if (indices_.back() > layers) {
    throw ConfigError(
        fmt::format("layer subset {} out of range for a {}-layer model", to_string(), layers));
  }
}

std::string LayerSubset::to_string() const { return fmt::format("{{{}}}", fmt::join(indices_, ",")); }

// ---------------------------------------------------------------------------
// EncoderModel

EncoderModel EncoderModel::create(const EncoderConfig& config) {
  config.validate();
  EncoderModel m;
  m.config = config;
  Rng rng = rng_fork(config.seed, "init");
  m.input_w = nn::ParamTensor("input.w", nn::xavier_uniform(config.input_dim, config.d_model, rng));
  m.input_b = nn::ParamTensor("input.b", Matrix(1, config.d_model));
  m.layers.reserve(config.layers);
  for (std::size_t l = 1; l <= config.layers; ++l) {
    m.layers.push_back(
        nn::LayerParams::create(config.d_model, config.d_ff, fmt::format("layers.{}", l), rng));
  }
  m.final_norm_gain = nn::ParamTensor("final_norm.gain", Matrix(1, config.d_model, 1.0));
  m.final_norm_bias = nn::ParamTensor("final_norm.bias", Matrix(1, config.d_model));
  m.ctc_w = nn::ParamTensor("ctc.w", nn::xavier_uniform(config.d_model, config.vocab, rng));
  m.ctc_b = nn::ParamTensor("ctc.b", Matrix(1, config.vocab));
  return m;
}

std::vector<nn::ParamTensor*> EncoderModel::params() {
  std::vector<nn::ParamTensor*> out = {&input_w, &input_b};
  for (auto& layer : layers)
    for (auto* p : layer.params()) out.push_back(p);
  out.insert(out.end(), {&final_norm_gain, &final_norm_bias, &ctc_w, &ctc_b});
  return out;
}

std::vector<const nn::ParamTensor*> EncoderModel::params() const {
  std::vector<const nn::ParamTensor*> out = {&input_w, &input_b};
  for (const auto& layer : layers)
    for (const auto* p : layer.params()) out.push_back(p);
  out.insert(out.end(), {&final_norm_gain, &final_norm_bias, &ctc_w, &ctc_b});
  return out;
}

void EncoderModel::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params()) n += p->value.size();
  return n;
}

std::uint64_t EncoderModel::parameter_hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto* p : params()) {
    h = fnv1a64(p->name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(p->value.data().data()),
                                 p->value.size() * sizeof(double)),
                h);
  }
  return h;
}

Matrix positional_encoding(std::size_t steps, std::size_t d_model) {
  Matrix pe(steps, d_model);
  for (std::size_t pos = 0; pos < steps; ++pos) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe(pos, i) = std::sin(angle);
      if (i + 1 < d_model) pe(pos, i + 1) = std::cos(angle);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

// Shared by the mutable (gradient-accumulating) and const (frozen) paths, so
// eval and train arithmetic is identical operation for operation.
template <class Model>
TapedTrace forward_core(Model& model, nn::Tape& tape, const Matrix& features,
                        const LayerSubset& subset, Rng* train_rng) {
  const EncoderConfig& cfg = model.config;
  subset.check_within(cfg.layers);
  if (features.cols() != cfg.input_dim) {
    throw ConfigError(fmt::format("features have {} columns, model expects {}", features.cols(),
                                  cfg.input_dim));
  }
  if (features.rows() == 0) throw ConfigError("empty feature sequence");

  TapedTrace trace;
  trace.outputs.reserve(cfg.layers + 1);
  trace.kept.reserve(cfg.layers);

  nn::Var x = tape.constant(features);
  nn::Var h = nn::linear(tape, x, tape.param(model.input_w), tape.param(model.input_b));
  h = nn::add(tape, h, tape.constant(positional_encoding(features.rows(), cfg.d_model)));
  trace.outputs.push_back(h);

  for (std::size_t l = 1; l <= cfg.layers; ++l) {
    if (!subset.contains(l)) {
      trace.outputs.push_back(h);
      trace.kept.push_back(0);
      continue;
    }
    double factor = 1.0;
    if (train_rng != nullptr) {
      if (!train_rng->bernoulli(cfg.keep_prob)) {
        trace.outputs.push_back(h);
        trace.kept.push_back(0);
        continue;
      }
      factor = 1.0 / cfg.keep_prob;
    }
    auto& lp = model.layers[l - 1];
    nn::Var a = nn::layer_norm(tape, h, tape.param(lp.norm_att_gain), tape.param(lp.norm_att_bias));
    a = nn::self_attention(tape, a, tape.param(lp.wq), tape.param(lp.wk), tape.param(lp.wv),
                           tape.param(lp.wo), cfg.heads);
    if (factor != 1.0) a = nn::scale(tape, a, factor);
    h = nn::add(tape, h, a);

    nn::Var f = nn::layer_norm(tape, h, tape.param(lp.norm_ff_gain), tape.param(lp.norm_ff_bias));
    f = nn::feed_forward(tape, f, tape.param(lp.w1), tape.param(lp.b1), tape.param(lp.w2),
                         tape.param(lp.b2));
    if (factor != 1.0) f = nn::scale(tape, f, factor);
    h = nn::add(tape, h, f);

    trace.outputs.push_back(h);
    trace.kept.push_back(1);
  }
  return trace;
}

template <class Model>
nn::Var project_core(Model& model, nn::Tape& tape, nn::Var hidden) {
  nn::Var n = nn::layer_norm(tape, hidden, tape.param(model.final_norm_gain),
                             tape.param(model.final_norm_bias));
  return nn::linear(tape, n, tape.param(model.ctc_w), tape.param(model.ctc_b));
}

}  // namespace

TapedTrace forward_taped(EncoderModel& model, nn::Tape& tape, const Matrix& features,
                         const LayerSubset& subset, Rng* train_rng) {
  return forward_core(model, tape, features, subset, train_rng);
}

TapedTrace forward_taped(const EncoderModel& model, nn::Tape& tape, const Matrix& features,
                         const LayerSubset& subset, Rng* train_rng) {
  return forward_core(model, tape, features, subset, train_rng);
}

ForwardTrace forward(const EncoderModel& model, const Matrix& features, const LayerSubset& subset,
                     Rng* train_rng) {
  nn::Tape tape;
  TapedTrace taped = forward_core(model, tape, features, subset, train_rng);
  ForwardTrace trace;
  trace.kept = std::move(taped.kept);
  trace.outputs.reserve(taped.outputs.size());
  for (nn::Var v : taped.outputs) trace.outputs.push_back(tape.value(v));
  return trace;
}

ForwardTrace forward(const EncoderModel& model, const Matrix& features) {
  return forward(model, features, LayerSubset::prefix(model.config.layers));
}

Matrix project_to_vocab(const EncoderModel& model, const Matrix& hidden) {
  nn::Tape tape;
  nn::Var logits = project_core(model, tape, tape.constant(hidden));
  return tape.value(logits);
}

nn::Var project_to_vocab(EncoderModel& model, nn::Tape& tape, nn::Var hidden) {
  return project_core(model, tape, hidden);
}

EncoderModel induce_submodel(const EncoderModel& model, const LayerSubset& subset) {
  subset.check_within(model.config.layers);
  EncoderModel sub;
  sub.config = model.config;
  sub.config.layers = subset.size();
  sub.config.taps.clear();
  for (std::size_t pos = 0; pos < subset.size(); ++pos) {
    const std::size_t original = subset.indices()[pos];
    const bool tapped = std::find(model.config.taps.begin(), model.config.taps.end(), original) !=
                        model.config.taps.end();
    if (tapped && pos + 1 < subset.size()) sub.config.taps.push_back(pos + 1);
  }
  sub.input_w = model.input_w;
  sub.input_b = model.input_b;
  sub.layers.reserve(subset.size());
  for (std::size_t pos = 0; pos < subset.size(); ++pos) {
    sub.layers.push_back(model.layers[subset.indices()[pos] - 1]);
    sub.layers.back().set_prefix(fmt::format("layers.{}", pos + 1));
  }
  sub.final_norm_gain = model.final_norm_gain;
  sub.final_norm_bias = model.final_norm_bias;
  sub.ctc_w = model.ctc_w;
  sub.ctc_b = model.ctc_b;
  sub.config.validate();
  return sub;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'C', 'T', 'C'};

template <class T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError(fmt::format("truncated checkpoint while reading {}", what));
  return v;
}

std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError(fmt::format("truncated checkpoint while reading {}", what));
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const EncoderModel& model) {
  out.write(kCheckpointMagic, 4);
  put(out, kCheckpointVersion);
  const std::string cfg = model.config.to_text();
  put(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto ps = model.params();
  put(out, static_cast<std::uint32_t>(ps.size()));
  for (const auto* p : ps) {
    put(out, static_cast<std::uint16_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_matrix(out, p->value);
  }
}

EncoderModel read_checkpoint(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in) throw DataError("truncated checkpoint while reading magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("bad magic: not a checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("checkpoint version mismatch: file has {}, reader supports {}",
                                version, kCheckpointVersion));
  }
  const auto cfg_len = get<std::uint32_t>(in, "config length");
  EncoderConfig config = EncoderConfig::from_text(get_bytes(in, cfg_len, "config"));
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw DataError(fmt::format("checkpoint holds an invalid config: {}", e.what()));
  }
  EncoderModel model = EncoderModel::create(config);
  const auto count = get<std::uint32_t>(in, "record count");
  auto ps = model.params();
  if (count != ps.size()) {
    throw DataError(fmt::format("checkpoint has {} parameter records, config implies {}", count,
                                ps.size()));
  }
  for (auto* p : ps) {
    const auto name_len = get<std::uint16_t>(in, "name length");
    const std::string name = get_bytes(in, name_len, "parameter name");
    if (name != p->name) {
      throw DataError(fmt::format("checkpoint record '{}' where '{}' was expected", name, p->name));
    }
    Matrix value;
    try {
      value = read_matrix(in);
    } catch (const DataError& e) {
      throw DataError(fmt::format("truncated or corrupt checkpoint record '{}': {}", name, e.what()));
    }
    if (!value.same_shape(p->value)) {
      throw DataError(fmt::format("parameter '{}' has shape {}, expected {}", name,
                                  value.shape_string(), p->value.shape_string()));
    }
    p->value = std::move(value);
  }
  return model;
}

void save_checkpoint(const EncoderModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  write_checkpoint(out, model);
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

EncoderModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  return read_checkpoint(in);
}

}  // namespace ctcprune
