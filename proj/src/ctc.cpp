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

#include "ctcprune/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "ctcprune/error.hpp"

namespace ctcprune::ctc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_inputs(const Matrix& logits, const LabelSequence& y) {
  const std::size_t vocab = logits.cols();
  if (vocab < 2) throw ConfigError(fmt::format("ctc needs V >= 2, got {}", vocab));
  for (int label : y) {
    if (label <= kBlank || static_cast<std::size_t>(label) >= vocab) {
      throw ConfigError(fmt::format("label {} outside [1, {}]", label, vocab - 1));
    }
  }
  if (!all_finite(logits)) throw NumericError("ctc logits contain non-finite values");
  if (logits.rows() < min_frames(y)) {
    throw NumericError(fmt::format("infeasible alignment: {} frames cannot emit {} labels "
                                   "(at least {} frames needed)",
                                   logits.rows(), y.size(), min_frames(y)));
  }
}

Matrix log_probs(const Matrix& logits) {
  Matrix lp(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    auto row = log_softmax(logits.row(t));
    std::copy(row.begin(), row.end(), lp.row(t).begin());
  }
  return lp;
}

// Blank-augmented target: ∅ y1 ∅ y2 ... yU ∅.
std::vector<int> extend(const LabelSequence& y) {
  std::vector<int> ext(2 * y.size() + 1, kBlank);
  for (std::size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y[i];
  return ext;
}

bool can_skip(const std::vector<int>& ext, std::size_t s) {
  return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2];
}

Matrix forward_variables(const Matrix& lp, const std::vector<int>& ext) {
  const std::size_t steps = lp.rows(), states = ext.size();
  Matrix alpha(steps, states, kNegInf);
  alpha(0, 0) = lp(0, ext[0]);
  if (states > 1) alpha(0, 1) = lp(0, ext[1]);
  for (std::size_t t = 1; t < steps; ++t) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(ext, s)) acc = log_add(acc, alpha(t - 1, s - 2));
      alpha(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
    }
  }
  return alpha;
}

double total_log_prob(const Matrix& alpha) {
  const std::size_t last = alpha.rows() - 1, states = alpha.cols();
  double lp = alpha(last, states - 1);
  if (states > 1) lp = log_add(lp, alpha(last, states - 2));
  return lp;
}

}  // namespace

LabelSequence collapse(const Alignment& a) {
  LabelSequence out;
  int prev = -1;
  for (int sym : a) {
    if (sym != prev && sym != kBlank) out.push_back(sym);
    prev = sym;
  }
  return out;
}

std::size_t min_frames(const LabelSequence& y) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y[i] == y[i - 1]) ++repeats;
  return y.size() + repeats;
}

double ctc_forward(const Matrix& logits, const LabelSequence& y) {
  check_inputs(logits, y);
  if (logits.rows() == 0) return 0.0;
  const Matrix alpha = forward_variables(log_probs(logits), extend(y));
  return -total_log_prob(alpha);
}

LossAndGrad ctc_loss(const Matrix& logits, const LabelSequence& y) {
  check_inputs(logits, y);
  const std::size_t steps = logits.rows(), vocab = logits.cols();
  LossAndGrad result;
  result.grad = Matrix(steps, vocab);
  if (steps == 0) return result;

  const Matrix lp = log_probs(logits);
  const std::vector<int> ext = extend(y);
  const std::size_t states = ext.size();
  const Matrix alpha = forward_variables(lp, ext);
  const double log_likelihood = total_log_prob(alpha);
  if (!std::isfinite(log_likelihood)) {
    throw NumericError("ctc likelihood underflowed to zero");
  }

  // beta(t, s) includes the emission at frame t, like alpha.
  Matrix beta(steps, states, kNegInf);
  beta(steps - 1, states - 1) = lp(steps - 1, ext[states - 1]);
  if (states > 1) beta(steps - 1, states - 2) = lp(steps - 1, ext[states - 2]);
  for (std::size_t t = steps - 1; t-- > 0;) {
    for (std::size_t s = 0; s < states; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < states && can_skip(ext, s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      beta(t, s) = acc == kNegInf ? kNegInf : acc + lp(t, ext[s]);
    }
  }

  std::vector<double> occupancy(vocab);
  for (std::size_t t = 0; t < steps; ++t) {
    std::fill(occupancy.begin(), occupancy.end(), kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      const double ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf) continue;
      occupancy[ext[s]] = log_add(occupancy[ext[s]], ab - lp(t, ext[s]));
    }
    for (std::size_t k = 0; k < vocab; ++k) {
      const double posterior =
          occupancy[k] == kNegInf ? 0.0 : std::exp(occupancy[k] - log_likelihood);
      result.grad(t, k) = std::exp(lp(t, k)) - posterior;
    }
  }
  result.loss = -log_likelihood;
  return result;
}

double ctc_brute_force(const Matrix& logits, const LabelSequence& y) {
  const std::size_t steps = logits.rows(), vocab = logits.cols();
  if (vocab < 2) throw ConfigError(fmt::format("ctc needs V >= 2, got {}", vocab));
  std::uint64_t count = 1;
  for (std::size_t t = 0; t < steps; ++t) {
    count *= vocab;
    if (count > kBruteForceBudget) {
      throw ConfigError(fmt::format("brute-force enumeration of {}^{} alignments exceeds budget {}",
                                    vocab, steps, kBruteForceBudget));
    }
  }
  const Matrix lp = log_probs(logits);
  Alignment a(steps, 0);
  double total = kNegInf;
  for (std::uint64_t code = 0; code < count; ++code) {
    std::uint64_t rest = code;
    double path = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      a[t] = static_cast<int>(rest % vocab);
      rest /= vocab;
      path += lp(t, a[t]);
    }
    if (collapse(a) == y) total = log_add(total, path);
  }
  if (total == kNegInf) {
    throw NumericError("infeasible alignment: no alignment collapses to the target");
  }
  return -total;
}

LabelSequence greedy_decode(const Matrix& logits) {
  Alignment best(logits.rows());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    auto row = logits.row(t);
    // max_element returns the first maximum, i.e. the smallest id on ties.
    best[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return collapse(best);
}

std::size_t edit_distance(const LabelSequence& a, const LabelSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

nn::Var ctc_loss(nn::Tape& t, nn::Var logits, const LabelSequence& y) {
  LossAndGrad lg = ctc_loss(t.value(logits), y);
  return t.push(Matrix(1, 1, lg.loss), [logits, grad = std::move(lg.grad)](nn::Tape& t,
                                                                            nn::Var o) {
    const double g = t.grad(o)(0, 0);
    Matrix& gl = t.grad(logits);
    for (std::size_t i = 0; i < grad.size(); ++i) gl.data()[i] += g * grad.data()[i];
  });
}

}  // namespace ctcprune::ctc
