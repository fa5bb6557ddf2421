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

#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "twoway/encoder.h"
#include "twoway/grid.h"
#include "twoway/rng.h"
#include "twoway/tensor.h"

namespace twoway {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

enum class Pooling { kMax, kMean, kLast };
const char* PoolingName(Pooling pooling);
// Throws DomainError on an unknown name.
Pooling ParsePooling(const std::string& name);

struct ModelConfig {
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_cell = 64;
  std::size_t max_positions = 256;
  Pooling pooling = Pooling::kMax;
  // Share attention/FFN layers and the final norm between the two encoders;
  // embeddings stay per side.
  bool tie_encoders = false;

  EncoderConfig Encoder(std::size_t vocab) const;
};

template <typename T>
struct BidirModelParams {
  ModelConfig config;
  EncoderParams<T> src_encoder;
  EncoderParams<T> tgt_encoder;
  TwoDLSTMParams<T> grid;
  Tensor<T> out_tgt, out_tgt_bias;  // [d_cell x |V_e|], [|V_e|]
  Tensor<T> out_src, out_src_bias;  // [d_cell x |V_f|], [|V_f|]

  static BidirModelParams Init(const ModelConfig& config, Rng& rng);
  static BidirModelParams Zeros(const ModelConfig& config);

  // Names are "src_encoder.*", "tgt_encoder.*", "grid.{w,u,v,b}",
  // "out_tgt.{w,b}" and "out_src.{w,b}".
  void Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  std::vector<std::pair<std::string, Tensor<T>*>> Named();
};

// Converts between precisions; gradients are not copied.
template <typename To, typename From>
BidirModelParams<To> CastParams(BidirModelParams<From>& params);

// Gradient-check group of element `index` of the tensor called `name`:
// "src_encoder", "tgt_encoder", "gate.<gate>", "out_tgt" or "out_src".
std::string ParameterGroup(const std::string& name, std::size_t index, std::size_t d_cell);

// Padded id matrices, row-major [batch x steps]. Row b holds BOS, the
// sentence, EOS, then padding; len[b] is the EOS position, which is also the
// lattice extent along that side.
struct BidirBatch {
  std::size_t batch = 0;
  std::size_t src_steps = 0, tgt_steps = 0;
  std::vector<int> src_tokens, tgt_tokens;
  std::vector<std::size_t> src_len, tgt_len;

  int src_at(std::size_t b, std::size_t t) const { return src_tokens[b * src_steps + t]; }
  int tgt_at(std::size_t b, std::size_t t) const { return tgt_tokens[b * tgt_steps + t]; }
  // Predicted tokens: src_len + tgt_len summed over the batch.
  std::size_t TokenCount() const;
};

// Frames unframed id sequences. Throws PreconditionError on size mismatch or
// an empty batch.
BidirBatch MakeBatch(const std::vector<std::vector<int>>& src,
                     const std::vector<std::vector<int>>& tgt);

// Pools the hidden states of one row or column ([len x d_cell]) into one.
template <typename T>
Tensor<T> pool_states(const Tensor<T>& states, Pooling pooling);

// Pools slots 1..len of every stream of a line ([n x (len+1)*d_cell]).
template <typename T>
Tensor<T> pool_line(const Tensor<T>& line_z, std::size_t len, std::size_t d_cell,
                    Pooling pooling);

// Distribution over the target vocabulary from grid row i (z[1..J, i]).
template <typename T>
Tensor<T> predict_target_row(const BidirModelParams<T>& params, const Tensor<T>& grid_row);

// Distribution over the source vocabulary from grid column j (z[j, 1..I]).
template <typename T>
Tensor<T> predict_source_col(const BidirModelParams<T>& params, const Tensor<T>& grid_col);

template <typename T>
struct JointLoss {
  Tensor<T> total;    // summed NLL of both directions (or the weighted mix)
  Tensor<T> fwd_nll;  // target tokens given the source
  Tensor<T> bwd_nll;  // source tokens given the target
  std::size_t tgt_tokens = 0;
  std::size_t src_tokens = 0;
};

struct LossOptions {
  double dropout = 0.0;
  Rng* rng = nullptr;
  // Negative: plain sum. Otherwise total = w * fwd + (1 - w) * bwd.
  double direction_weight = -1.0;
};

// Both directions from a single grid forward over the batch.
template <typename T>
JointLoss<T> joint_loss(const BidirModelParams<T>& params, const BidirBatch& batch,
                        const LossOptions& options = {});

// Per-position logits of both directions, with the gold label of each row.
template <typename T>
struct TeacherForcedLogits {
  Tensor<T> tgt_logits;  // [sum I x |V_e|], example-major then i
  Tensor<T> src_logits;  // [sum J x |V_f|], example-major then j
  std::vector<int> tgt_labels, src_labels;
};

template <typename T>
TeacherForcedLogits<T> teacher_forced_logits(const BidirModelParams<T>& params,
                                             const BidirBatch& batch,
                                             const LossOptions& options = {});

// Framed sequences (BOS ... EOS) of one pair. Returns the target-side rows
// (one per target position, EOS included) and the source-side rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> teacher_forced_distributions(const BidirModelParams<T>& params,
                                                             const std::vector<int>& src,
                                                             const std::vector<int>& tgt);

}  // namespace twoway
