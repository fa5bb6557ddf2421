// Copyright 2026 The twoway Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "twoway/decoding.h"

#include <algorithm>
#include <cmath>

#include "twoway/grid.h"
#include "twoway/ops.h"

namespace twoway {

namespace {

// Streaming state shared by beam search and forced decoding. The generated
// side is re-encoded from its prefix at every step; the conditioning side is
// encoded and projected once.
template <typename T>
class Stepper {
 public:
  Stepper(const BidirModelParams<T>& params, const std::vector<int>& conditioning,
          Direction direction)
      : params_(params), direction_(direction) {
    if (conditioning.empty()) throw PreconditionError("decode: empty input sequence");
    std::vector<int> framed{kBosId};
    framed.insert(framed.end(), conditioning.begin(), conditioning.end());
    len_ = framed.size();
    const bool fwd = direction == Direction::kForward;
    auto states = encode(fwd ? params.src_encoder : params.tgt_encoder, framed).states;
    proj_ = fwd ? ProjectSource(params.grid, states, len_)
                : ProjectTarget(params.grid, states, len_);
  }

  GridLine<T> Start() const { return ZeroLine<T>(1, len_, params_.grid.d_cell); }
  std::size_t vocab() const { return out_w().cols(); }

  // Appends one line for every stream; `prefixes` all have the same length
  // and start with BOS. Returns the new lines and [n x V] log-probabilities.
  std::pair<GridLine<T>, Tensor<T>> Advance(const std::vector<std::vector<int>>& prefixes,
                                            const GridLine<T>& prev) const {
    const std::size_t n = prefixes.size(), steps = prefixes.front().size();
    std::vector<int> ids;
    ids.reserve(n * steps);
    for (const auto& p : prefixes) ids.insert(ids.end(), p.begin(), p.end());
    const bool fwd = direction_ == Direction::kForward;
    Tensor<T> own = EncodeBatch(fwd ? params_.tgt_encoder : params_.src_encoder,
                                std::span<const int>(ids), n, steps);
    std::vector<std::int64_t> last(n);
    for (std::size_t b = 0; b < n; ++b) last[b] = static_cast<std::int64_t>(b * steps + steps - 1);
    Tensor<T> latest = gather_rows(own, std::span<const std::int64_t>(last));
    GridLine<T> line = fwd ? StreamRow(params_.grid, proj_, latest, prev)
                           : StreamColumn(params_.grid, proj_, latest, prev);
    Tensor<T> pooled = pool_line(line.z, len_, params_.grid.d_cell, params_.config.pooling);
    Tensor<T> logits = add(matmul(pooled, out_w()), out_b());
    return {line, log_softmax_rows(logits)};
  }

 private:
  const Tensor<T>& out_w() const {
    return direction_ == Direction::kForward ? params_.out_tgt : params_.out_src;
  }
  const Tensor<T>& out_b() const {
    return direction_ == Direction::kForward ? params_.out_tgt_bias : params_.out_src_bias;
  }

  const BidirModelParams<T>& params_;
  Direction direction_;
  std::size_t len_ = 0;
  LineProjections<T> proj_;
};

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;
};

struct Candidate {
  double score;
  std::size_t parent;
  int token;
};

double Normalize(double score, std::size_t length, double alpha) {
  return alpha == 0.0 ? score : score / std::pow(double(std::max<std::size_t>(length, 1)), alpha);
}

}  // namespace

const char* DirectionName(Direction direction) {
  return direction == Direction::kForward ? "fwd" : "bwd";
}

template <typename T>
DecodeResult decode(const BidirModelParams<T>& params, const std::vector<int>& conditioning,
                    Direction direction, const BeamConfig& config) {
  if (config.beam == 0) throw PreconditionError("beam must be at least 1");
  NoGradGuard no_grad;
  Stepper<T> stepper(params, conditioning, direction);
  const std::size_t max_len =
      config.max_len ? config.max_len : 3 * conditioning.size() + 5;
  const std::size_t vocab = stepper.vocab();

  std::vector<Hypothesis> live{Hypothesis{}};
  GridLine<T> line = stepper.Start();
  std::vector<DecodeResult> finished;
  auto finish = [&](const Hypothesis& h, bool eos) {
    DecodeResult r;
    r.tokens = h.tokens;
    r.score = h.score;
    r.ended_with_eos = eos;
    r.normalized = Normalize(h.score, h.tokens.size() + (eos ? 1 : 0), config.alpha);
    finished.push_back(std::move(r));
  };

  for (std::size_t t = 1; t <= max_len && !live.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) {
      auto& p = prefixes.emplace_back(1, kBosId);
      p.insert(p.end(), h.tokens.begin(), h.tokens.end());
    }
    auto [next_line, logp] = stepper.Advance(prefixes, line);
    std::vector<Candidate> candidates;
    for (std::size_t h = 0; h < live.size(); ++h) {
      for (std::size_t v = 0; v < vocab; ++v) {
        if (v == std::size_t(kPadId) || v == std::size_t(kBosId)) continue;
        candidates.push_back({live[h].score + double(logp.at(h, v)), h, int(v)});
      }
    }
    const std::size_t keep = std::min(config.beam, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep, candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    std::vector<std::int64_t> parents;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = candidates[k];
      Hypothesis h{live[c.parent].tokens, c.score};
      if (c.token == kEosId) {
        finish(h, true);
        continue;
      }
      h.tokens.push_back(c.token);
      if (t == max_len) {
        finish(h, false);
        continue;
      }
      next.push_back(std::move(h));
      parents.push_back(static_cast<std::int64_t>(c.parent));
    }
    live = std::move(next);
    if (live.empty()) break;
    line = {gather_rows(next_line.z, std::span<const std::int64_t>(parents)),
            gather_rows(next_line.c, std::span<const std::int64_t>(parents))};
    // Scores only fall as hypotheses grow, so without length normalization
    // no live hypothesis can overtake a better finished one.
    if (config.alpha == 0.0 && !finished.empty()) {
      double best_finished = finished.front().score;
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      if (best_finished >= live.front().score) break;
    }
  }
  const DecodeResult* best = &finished.front();
  for (const auto& f : finished) {
    if (f.normalized > best->normalized) best = &f;
  }
  return *best;
}

template <typename T>
double score_sequence(const BidirModelParams<T>& params, const std::vector<int>& src,
                      const std::vector<int>& tgt, Direction direction) {
  NoGradGuard no_grad;
  auto unframe = [](const std::vector<int>& seq) {
    if (seq.size() < 2 || seq.front() != kBosId || seq.back() != kEosId) {
      throw PreconditionError("score_sequence: sequences must be framed by BOS and EOS");
    }
    return std::vector<int>(seq.begin() + 1, seq.end() - 1);
  };
  auto logits = teacher_forced_logits(params, MakeBatch({unframe(src)}, {unframe(tgt)}));
  const bool fwd = direction == Direction::kForward;
  Tensor<T> logp = log_softmax_rows(fwd ? logits.tgt_logits : logits.src_logits);
  const auto& labels = fwd ? logits.tgt_labels : logits.src_labels;
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) total += double(logp.at(r, labels[r]));
  return total;
}

template <typename T>
Tensor<T> forced_stream_distributions(const BidirModelParams<T>& params,
                                      const std::vector<int>& conditioning,
                                      const std::vector<int>& output, Direction direction) {
  NoGradGuard no_grad;
  Stepper<T> stepper(params, conditioning, direction);
  GridLine<T> line = stepper.Start();
  std::vector<int> prefix{kBosId};
  std::vector<Tensor<T>> rows;
  for (std::size_t t = 0; t <= output.size(); ++t) {
    auto [next, logp] = stepper.Advance({prefix}, line);
    rows.push_back(exp(logp));
    line = next;
    if (t < output.size()) prefix.push_back(output[t]);
  }
  return concat_rows(rows);
}

#define TWOWAY_INSTANTIATE_DECODING(T)                                                      \
  template DecodeResult decode(const BidirModelParams<T>&, const std::vector<int>&,         \
                               Direction, const BeamConfig&);                               \
  template double score_sequence(const BidirModelParams<T>&, const std::vector<int>&,       \
                                 const std::vector<int>&, Direction);                       \
  template Tensor<T> forced_stream_distributions(const BidirModelParams<T>&,                \
                                                 const std::vector<int>&,                   \
                                                 const std::vector<int>&, Direction);

TWOWAY_INSTANTIATE_DECODING(float)
TWOWAY_INSTANTIATE_DECODING(double)

#undef TWOWAY_INSTANTIATE_DECODING

}  // namespace twoway
