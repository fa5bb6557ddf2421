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

#include "twoway/model.h"

#include <cmath>

#include "twoway/ops.h"

namespace twoway {

namespace {

template <typename T>
void XavierUniform(Tensor<T>& t, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(t.rows() + t.cols()));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// Segments over rows of `rows_per_stream`-slot blocks, skipping slot 0.
std::vector<std::vector<std::size_t>> LineSegments(std::size_t streams, std::size_t len) {
  std::vector<std::vector<std::size_t>> segments(streams);
  for (std::size_t b = 0; b < streams; ++b) {
    for (std::size_t k = 1; k <= len; ++k) segments[b].push_back(b * (len + 1) + k);
  }
  return segments;
}

template <typename T>
Tensor<T> PoolSegments(const Tensor<T>& x, const std::vector<std::vector<std::size_t>>& segments,
                       Pooling pooling) {
  switch (pooling) {
    case Pooling::kMax: return segment_max(x, segments);
    case Pooling::kMean: return segment_mean(x, segments);
    case Pooling::kLast: return segment_last(x, segments);
  }
  throw DomainError("unknown pooling mode");
}

// Encoder input for one side: the first `steps` columns of the framed ids.
std::vector<int> EncoderInput(const std::vector<int>& framed, std::size_t batch,
                              std::size_t framed_steps, std::size_t steps) {
  std::vector<int> out(batch * steps);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) out[b * steps + t] = framed[b * framed_steps + t];
  }
  return out;
}

void CheckBatch(const BidirBatch& batch) {
  if (batch.batch == 0) throw PreconditionError("empty batch");
  for (std::size_t b = 0; b < batch.batch; ++b) {
    if (batch.src_len[b] == 0 || batch.tgt_len[b] == 0) {
      throw PreconditionError("batch example " + std::to_string(b) + " has a zero-length side");
    }
  }
}

}  // namespace

const char* PoolingName(Pooling pooling) {
  switch (pooling) {
    case Pooling::kMax: return "max";
    case Pooling::kMean: return "mean";
    case Pooling::kLast: return "last";
  }
  return "?";
}

Pooling ParsePooling(const std::string& name) {
  if (name == "max") return Pooling::kMax;
  if (name == "mean") return Pooling::kMean;
  if (name == "last") return Pooling::kLast;
  throw DomainError("unknown pooling mode '" + name + "' (expected max, mean or last)");
}

EncoderConfig ModelConfig::Encoder(std::size_t vocab) const {
  EncoderConfig c;
  c.vocab = vocab;
  c.d_model = d_model;
  c.d_ff = d_ff;
  c.heads = heads;
  c.layers = layers;
  c.max_positions = max_positions;
  return c;
}

// Points the target encoder's stack at the source encoder's tensors.
template <typename T>
void TieStacks(BidirModelParams<T>& p) {
  if (!p.config.tie_encoders) return;
  p.tgt_encoder.layers = p.src_encoder.layers;
  p.tgt_encoder.final_gain = p.src_encoder.final_gain;
  p.tgt_encoder.final_bias = p.src_encoder.final_bias;
}

template <typename T>
BidirModelParams<T> BidirModelParams<T>::Init(const ModelConfig& config, Rng& rng) {
  BidirModelParams p;
  p.config = config;
  p.src_encoder = EncoderParams<T>::Init(config.Encoder(config.src_vocab), rng);
  p.tgt_encoder = EncoderParams<T>::Init(config.Encoder(config.tgt_vocab), rng);
  p.grid = TwoDLSTMParams<T>::Init(config.d_model, config.d_cell, rng);
  p.out_tgt = Tensor<T>({config.d_cell, config.tgt_vocab});
  p.out_src = Tensor<T>({config.d_cell, config.src_vocab});
  XavierUniform(p.out_tgt, rng);
  XavierUniform(p.out_src, rng);
  p.out_tgt_bias = Tensor<T>({config.tgt_vocab});
  p.out_src_bias = Tensor<T>({config.src_vocab});
  TieStacks(p);
  return p;
}

template <typename T>
BidirModelParams<T> BidirModelParams<T>::Zeros(const ModelConfig& config) {
  BidirModelParams p;
  p.config = config;
  p.src_encoder = EncoderParams<T>::Zeros(config.Encoder(config.src_vocab));
  p.tgt_encoder = EncoderParams<T>::Zeros(config.Encoder(config.tgt_vocab));
  p.grid = TwoDLSTMParams<T>::Zeros(config.d_model, config.d_cell);
  p.out_tgt = Tensor<T>({config.d_cell, config.tgt_vocab});
  p.out_src = Tensor<T>({config.d_cell, config.src_vocab});
  p.out_tgt_bias = Tensor<T>({config.tgt_vocab});
  p.out_src_bias = Tensor<T>({config.src_vocab});
  TieStacks(p);
  return p;
}

template <typename T>
void BidirModelParams<T>::Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  src_encoder.Visit([&](const std::string& name, Tensor<T>& t) { fn("src_encoder." + name, t); });
  if (config.tie_encoders) {
    fn("tgt_encoder.embedding", tgt_encoder.embedding);
  } else {
    tgt_encoder.Visit([&](const std::string& name, Tensor<T>& t) { fn("tgt_encoder." + name, t); });
  }
  grid.Visit([&](const std::string& name, Tensor<T>& t) { fn("grid." + name, t); });
  fn("out_tgt.w", out_tgt);
  fn("out_tgt.b", out_tgt_bias);
  fn("out_src.w", out_src);
  fn("out_src.b", out_src_bias);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> BidirModelParams<T>::Named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  Visit([&out](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename To, typename From>
BidirModelParams<To> CastParams(BidirModelParams<From>& params) {
  BidirModelParams<To> out = BidirModelParams<To>::Zeros(params.config);
  auto src = params.Named();
  auto dst = out.Named();
  for (std::size_t k = 0; k < src.size(); ++k) {
    auto from = src[k].second->data();
    auto to = dst[k].second->mutable_data();
    for (std::size_t e = 0; e < from.size(); ++e) to[e] = static_cast<To>(from[e]);
  }
  return out;
}

std::string ParameterGroup(const std::string& name, std::size_t index, std::size_t d_cell) {
  auto starts = [&name](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (starts("src_encoder.")) return "src_encoder";
  if (starts("tgt_encoder.")) return "tgt_encoder";
  if (starts("out_tgt.")) return "out_tgt";
  if (starts("out_src.")) return "out_src";
  if (starts("grid.")) {
    const std::size_t width = kNumGates * d_cell;
    const auto gate = static_cast<Gate>((index % width) / d_cell);
    return std::string("gate.") + GateName(gate);
  }
  throw DomainError("no parameter group for '" + name + "'");
}

std::size_t BidirBatch::TokenCount() const {
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch; ++b) n += src_len[b] + tgt_len[b];
  return n;
}

BidirBatch MakeBatch(const std::vector<std::vector<int>>& src,
                     const std::vector<std::vector<int>>& tgt) {
  if (src.size() != tgt.size()) {
    throw PreconditionError("MakeBatch: " + std::to_string(src.size()) + " sources vs " +
                            std::to_string(tgt.size()) + " targets");
  }
  if (src.empty()) throw PreconditionError("MakeBatch: empty batch");
  BidirBatch batch;
  batch.batch = src.size();
  for (std::size_t b = 0; b < src.size(); ++b) {
    batch.src_steps = std::max(batch.src_steps, src[b].size() + 2);
    batch.tgt_steps = std::max(batch.tgt_steps, tgt[b].size() + 2);
  }
  batch.src_tokens.assign(batch.batch * batch.src_steps, kPadId);
  batch.tgt_tokens.assign(batch.batch * batch.tgt_steps, kPadId);
  auto frame = [](const std::vector<int>& ids, std::size_t steps, std::size_t b,
                  std::vector<int>& out) {
    out[b * steps] = kBosId;
    std::copy(ids.begin(), ids.end(), out.begin() + b * steps + 1);
    out[b * steps + ids.size() + 1] = kEosId;
  };
  for (std::size_t b = 0; b < src.size(); ++b) {
    frame(src[b], batch.src_steps, b, batch.src_tokens);
    frame(tgt[b], batch.tgt_steps, b, batch.tgt_tokens);
    batch.src_len.push_back(src[b].size() + 1);
    batch.tgt_len.push_back(tgt[b].size() + 1);
  }
  return batch;
}

template <typename T>
Tensor<T> pool_states(const Tensor<T>& states, Pooling pooling) {
  if (states.rank() != 2 || states.rows() == 0) {
    throw PreconditionError("pooling needs a non-empty [len x d] block of states");
  }
  std::vector<std::vector<std::size_t>> segment(1);
  for (std::size_t r = 0; r < states.rows(); ++r) segment[0].push_back(r);
  return reshape(PoolSegments(states, segment, pooling), Shape{states.cols()});
}

template <typename T>
Tensor<T> pool_line(const Tensor<T>& line_z, std::size_t len, std::size_t d_cell,
                    Pooling pooling) {
  if (len == 0) throw PreconditionError("pool_line: empty line");
  const std::size_t n = line_z.rows();
  Tensor<T> flat = reshape(line_z, Shape{n * (len + 1), d_cell});
  return PoolSegments(flat, LineSegments(n, len), pooling);
}

template <typename T>
Tensor<T> predict_target_row(const BidirModelParams<T>& params, const Tensor<T>& grid_row) {
  Tensor<T> pooled = pool_states(grid_row, params.config.pooling);
  Tensor<T> logits = add(matmul(reshape(pooled, Shape{1, pooled.numel()}), params.out_tgt),
                         params.out_tgt_bias);
  return reshape(softmax_rows(logits), Shape{params.out_tgt.cols()});
}

template <typename T>
Tensor<T> predict_source_col(const BidirModelParams<T>& params, const Tensor<T>& grid_col) {
  Tensor<T> pooled = pool_states(grid_col, params.config.pooling);
  Tensor<T> logits = add(matmul(reshape(pooled, Shape{1, pooled.numel()}), params.out_src),
                         params.out_src_bias);
  return reshape(softmax_rows(logits), Shape{params.out_src.cols()});
}

template <typename T>
TeacherForcedLogits<T> teacher_forced_logits(const BidirModelParams<T>& params,
                                             const BidirBatch& batch,
                                             const LossOptions& options) {
  CheckBatch(batch);
  const std::size_t B = batch.batch;
  std::size_t J = 0, I = 0;
  for (std::size_t b = 0; b < B; ++b) {
    J = std::max(J, batch.src_len[b]);
    I = std::max(I, batch.tgt_len[b]);
  }
  const T rate = static_cast<T>(options.dropout);
  Tensor<T> hs = EncodeBatch(params.src_encoder,
                             EncoderInput(batch.src_tokens, B, batch.src_steps, J), B, J, rate,
                             options.rng);
  Tensor<T> ss = EncodeBatch(params.tgt_encoder,
                             EncoderInput(batch.tgt_tokens, B, batch.tgt_steps, I), B, I, rate,
                             options.rng);
  auto grid = WavefrontGrid<T>::Forward(params.grid, hs, J, ss, I, B, J, I);
  Tensor<T> states = grid.hidden_states();

  TeacherForcedLogits<T> out;
  std::vector<std::vector<std::size_t>> rows, cols;
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t Jb = batch.src_len[b], Ib = batch.tgt_len[b];
    for (std::size_t i = 1; i <= Ib; ++i) {
      auto& seg = rows.emplace_back();
      for (std::size_t j = 1; j <= Jb; ++j) seg.push_back(grid.RowOf(b, j, i));
      out.tgt_labels.push_back(batch.tgt_at(b, i));
    }
    for (std::size_t j = 1; j <= Jb; ++j) {
      auto& seg = cols.emplace_back();
      for (std::size_t i = 1; i <= Ib; ++i) seg.push_back(grid.RowOf(b, j, i));
      out.src_labels.push_back(batch.src_at(b, j));
    }
  }
  const Pooling pooling = params.config.pooling;
  out.tgt_logits =
      add(matmul(PoolSegments(states, rows, pooling), params.out_tgt), params.out_tgt_bias);
  out.src_logits =
      add(matmul(PoolSegments(states, cols, pooling), params.out_src), params.out_src_bias);
  return out;
}

template <typename T>
JointLoss<T> joint_loss(const BidirModelParams<T>& params, const BidirBatch& batch,
                        const LossOptions& options) {
  auto logits = teacher_forced_logits(params, batch, options);
  JointLoss<T> loss;
  loss.fwd_nll = cross_entropy_sum(logits.tgt_logits, std::span<const int>(logits.tgt_labels));
  loss.bwd_nll = cross_entropy_sum(logits.src_logits, std::span<const int>(logits.src_labels));
  loss.tgt_tokens = logits.tgt_labels.size();
  loss.src_tokens = logits.src_labels.size();
  if (options.direction_weight < 0) {
    loss.total = add(loss.fwd_nll, loss.bwd_nll);
  } else {
    const T w = static_cast<T>(options.direction_weight);
    loss.total = add(scale(loss.fwd_nll, w), scale(loss.bwd_nll, T(1) - w));
  }
  return loss;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> teacher_forced_distributions(const BidirModelParams<T>& params,
                                                             const std::vector<int>& src,
                                                             const std::vector<int>& tgt) {
  auto unframe = [](const std::vector<int>& seq, const char* side) {
    if (seq.size() < 2 || seq.front() != kBosId || seq.back() != kEosId) {
      throw PreconditionError(std::string(side) + " sequence must be framed by BOS and EOS");
    }
    return std::vector<int>(seq.begin() + 1, seq.end() - 1);
  };
  BidirBatch batch = MakeBatch({unframe(src, "source")}, {unframe(tgt, "target")});
  auto logits = teacher_forced_logits(params, batch);
  return {softmax_rows(logits.tgt_logits), softmax_rows(logits.src_logits)};
}

#define TWOWAY_INSTANTIATE_MODEL(T)                                                           \
  template struct BidirModelParams<T>;                                                        \
  template Tensor<T> pool_states(const Tensor<T>&, Pooling);                                  \
  template Tensor<T> pool_line(const Tensor<T>&, std::size_t, std::size_t, Pooling);          \
  template Tensor<T> predict_target_row(const BidirModelParams<T>&, const Tensor<T>&);        \
  template Tensor<T> predict_source_col(const BidirModelParams<T>&, const Tensor<T>&);        \
  template TeacherForcedLogits<T> teacher_forced_logits(const BidirModelParams<T>&,           \
                                                        const BidirBatch&, const LossOptions&); \
  template JointLoss<T> joint_loss(const BidirModelParams<T>&, const BidirBatch&,             \
                                   const LossOptions&);                                       \
  template std::pair<Tensor<T>, Tensor<T>> teacher_forced_distributions(                      \
      const BidirModelParams<T>&, const std::vector<int>&, const std::vector<int>&);

TWOWAY_INSTANTIATE_MODEL(float)
TWOWAY_INSTANTIATE_MODEL(double)

template BidirModelParams<double> CastParams(BidirModelParams<float>&);
template BidirModelParams<float> CastParams(BidirModelParams<double>&);
template BidirModelParams<float> CastParams(BidirModelParams<float>&);
template BidirModelParams<double> CastParams(BidirModelParams<double>&);

#undef TWOWAY_INSTANTIATE_MODEL

}  // namespace twoway
