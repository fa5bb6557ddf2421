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
#include <vector>

#include "twoway/model.h"
#include "twoway/tensor.h"

namespace twoway {

// kForward generates the target from the source (row by row), kBackward the
// source from the target (column by column).
enum class Direction { kForward, kBackward };
const char* DirectionName(Direction direction);

struct BeamConfig {
  std::size_t beam = 12;
  // Emitted tokens including EOS; 0 means 3 * conditioning length + 5.
  std::size_t max_len = 0;
  double alpha = 0.6;
};

struct DecodeResult {
  std::vector<int> tokens;  // without BOS and EOS
  double score = 0.0;       // summed log-probability of the emitted tokens
  double normalized = 0.0;  // score / length^alpha
  bool ended_with_eos = false;
};

// Beam search over `conditioning` (unframed ids of the given side). Expansion
// never emits pad or BOS; hypotheses reaching max_len are finished as is.
// Throws PreconditionError on an empty conditioning sequence.
template <typename T>
DecodeResult decode(const BidirModelParams<T>& params, const std::vector<int>& conditioning,
                    Direction direction, const BeamConfig& config);

template <typename T>
DecodeResult decode_forward(const BidirModelParams<T>& params, const std::vector<int>& src,
                            const BeamConfig& config) {
  return decode(params, src, Direction::kForward, config);
}

template <typename T>
DecodeResult decode_backward(const BidirModelParams<T>& params, const std::vector<int>& tgt,
                             const BeamConfig& config) {
  return decode(params, tgt, Direction::kBackward, config);
}

// Log-probability of the generated side given the other, on framed
// sequences.
template <typename T>
double score_sequence(const BidirModelParams<T>& params, const std::vector<int>& src,
                      const std::vector<int>& tgt, Direction direction);

// Feeds the unframed `output` through the streaming decoder cache one token
// at a time. Row k is the distribution after k output tokens; the last row
// predicts the token after the final one.
template <typename T>
Tensor<T> forced_stream_distributions(const BidirModelParams<T>& params,
                                      const std::vector<int>& conditioning,
                                      const std::vector<int>& output, Direction direction);

}  // namespace twoway
