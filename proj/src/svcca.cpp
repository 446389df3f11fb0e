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

#include "ctcprune/svcca.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "ctcprune/error.hpp"
#include "ctcprune/parallel.hpp"
#include "ctcprune/rng.hpp"

namespace ctcprune::svcca {

namespace fs = std::filesystem;

ActivationSet collect_activations(const EncoderModel& model, const Dataset& data,
                                  const LayerSubset& subset, const SubsampleOptions& options) {
  if (data.empty()) throw DataError("no utterances to collect activations from");
  const std::size_t levels = model.config.layers + 1;
  std::vector<std::vector<Matrix>> per_layer(levels);
  ActivationSet set;
  for (const auto& utt : data) {
    ForwardTrace trace = forward(model, utt.features, subset);
    for (std::size_t l = 0; l < levels; ++l) per_layer[l].push_back(std::move(trace.outputs[l]));
    set.utterance_ids.push_back(utt.id);
    set.total_frames += utt.features.rows();
  }

  std::vector<std::size_t> rows;
  if (options.max_frames > 0 && set.total_frames > options.max_frames) {
    set.stride = (set.total_frames + options.max_frames - 1) / options.max_frames;
    Rng rng = rng_fork(options.seed, "subsample");
    set.offset = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(set.stride) - 1));
    for (std::size_t r = set.offset; r < set.total_frames; r += set.stride) rows.push_back(r);
  }

  for (std::size_t l = 0; l < levels; ++l) {
    Matrix all = vstack(per_layer[l]);
    if (!rows.empty()) {
      Matrix picked(rows.size(), all.cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(all.row(rows[i]).begin(), all.row(rows[i]).end(), picked.row(i).begin());
      all = std::move(picked);
    }
    set.dumps.push_back({l, std::move(all)});
  }
  return set;
}

ReducedBasis reduce(const Matrix& x) {
  const std::size_t n = x.rows(), d = x.cols();
  if (d == 0) throw ConfigError("activation matrix has no columns");
  if (n < kMinRowsPerColumn * d) {
    throw ConfigError(fmt::format(
        "SVCCA needs at least {} frames per dimension: got {} frames for {} dimensions; "
        "use more validation data or a smaller subsampling stride",
        kMinRowsPerColumn, n, d));
  }
  Matrix centred = x;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += centred(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) centred(i, j) -= mean;
  }
  const SvdResult r = svd(centred);
  double total = 0.0;
  for (double s : r.s) total += s * s;
  if (!(total > 0.0)) throw NumericError("SVCCA rank collapse: activations are constant");
  std::size_t k = 0;
  double acc = 0.0;
  while (k < r.s.size() && acc < kVarianceRetained * total) {
    acc += r.s[k] * r.s[k];
    ++k;
  }
  if (k == 0) throw NumericError("SVCCA rank collapse: no direction retained");

  // Whitening X_k = U_k S_k gives U_k S_k (S_k + eps)^-1.
  ReducedBasis out{Matrix(n, k)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out.basis(i, j) = r.u(i, j) * (r.s[j] / (r.s[j] + kWhitenEpsilon));
  return out;
}

SvccaDetail compare(const ReducedBasis& x, const ReducedBasis& y) {
  if (x.basis.rows() != y.basis.rows()) {
    throw ConfigError(fmt::format("SVCCA inputs have {} and {} frames", x.basis.rows(),
                                  y.basis.rows()));
  }
  const SvdResult r = svd(matmul_tn(x.basis, y.basis));
  SvccaDetail d;
  d.kept_x = x.basis.cols();
  d.kept_y = y.basis.cols();
  d.correlations = r.s;
  double sum = 0.0;
  for (double c : r.s) sum += std::clamp(c, 0.0, 1.0);
  d.mean = sum / static_cast<double>(r.s.size());
  return d;
}

SvccaDetail svcca_detail(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows()) {
    throw ConfigError(fmt::format("SVCCA inputs have {} and {} frames", x.rows(), y.rows()));
  }
  return compare(reduce(x), reduce(y));
}

double svcca_similarity(const Matrix& x, const Matrix& y) { return svcca_detail(x, y).mean; }

Matrix similarity_matrix(const std::vector<ActivationDump>& dumps, std::size_t jobs) {
  if (dumps.size() < 2) throw ConfigError("similarity matrix needs at least two layers");
  const std::size_t n = dumps.size();
  std::vector<ReducedBasis> bases(n);
  parallel_for(n, jobs, [&](std::size_t i) { bases[i] = reduce(dumps[i].activations); });

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) pairs.emplace_back(i, j);
  std::vector<double> values(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t p) {
    values[p] = compare(bases[pairs[p].first], bases[pairs[p].second]).mean;
  });

  Matrix sim(n, n);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    sim(pairs[p].first, pairs[p].second) = values[p];
    sim(pairs[p].second, pairs[p].first) = values[p];
  }
  return sim;
}

void write_similarity_csv(const Matrix& similarity, const std::vector<ActivationDump>& dumps,
                          const std::string& path) {
  if (similarity.rows() != dumps.size() || similarity.cols() != dumps.size()) {
    throw ConfigError("similarity matrix and dump list disagree in size");
  }
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot open {} for writing", path));
  out << "layer";
  for (const auto& d : dumps) out << ',' << d.layer;
  out << '\n';
  for (std::size_t i = 0; i < dumps.size(); ++i) {
    out << dumps[i].layer;
    for (std::size_t j = 0; j < dumps.size(); ++j) out << fmt::format(",{:.10f}", similarity(i, j));
    out << '\n';
  }
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

void save_activation_dumps(const ActivationSet& set, const std::string& dir,
                           const std::string& config_hash) {
  fs::create_directories(dir);
  for (const auto& d : set.dumps) {
    const std::string stem = (fs::path(dir) / fmt::format("layer_{}", d.layer)).string();
    save_matrix(stem + ".pmat", d.activations);
    nlohmann::ordered_json meta;
    meta["layer"] = d.layer;
    meta["rows"] = d.activations.rows();
    meta["cols"] = d.activations.cols();
    meta["total_frames"] = set.total_frames;
    meta["subsample_stride"] = set.stride;
    meta["subsample_offset"] = set.offset;
    meta["utterance_ids"] = set.utterance_ids;
    meta["config_hash"] = config_hash;
    std::ofstream out(stem + ".json");
    out << meta.dump(2) << '\n';
    if (!out) throw DataError(fmt::format("failed writing {}.json", stem));
  }
}

}  // namespace ctcprune::svcca
