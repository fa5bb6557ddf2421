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
#include <span>
#include <string>
#include <vector>

#include "twoway/rng.h"
#include "twoway/tensor.h"

namespace twoway {

struct EncoderConfig {
  std::size_t vocab = 0;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t heads = 4;
  // Zero layers gives the embeddings-only variant.
  std::size_t layers = 2;
  std::size_t max_positions = 256;
};

template <typename T>
struct EncoderLayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Tensor<T> embedding;  // [vocab x d_model]
  std::vector<EncoderLayerParams<T>> layers;
  Tensor<T> final_gain, final_bias;
  Tensor<T> positional;  // sinusoidal table, not trained

  static EncoderParams Init(const EncoderConfig& config, Rng& rng);
  // All weight matrices and embeddings zero; layer-norm gains one.
  static EncoderParams Zeros(const EncoderConfig& config);

  // Visits trainable tensors with stable names relative to the encoder.
  void Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

template <typename T>
struct EncodedSequence {
  Tensor<T> states;        // [(T+1) x d_model], row 0 is BOS
  std::vector<bool> mask;  // true for real positions
};

// Causal multi-head self-attention over `batch` independent sequences stored
// back to back in q, k, v ([batch*steps x d_model]). Position t attends to
// positions 0..t of its own sequence only. `weights`, when given, receives
// the post-softmax matrices laid out [batch][head][t][u].
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, std::size_t batch = 1, T dropout = T(0),
                           Rng* rng = nullptr, std::vector<T>* weights = nullptr);

// Encodes `batch` padded sequences of `steps` tokens each (row-major ids).
// Padding after a sequence's end never influences its real positions.
template <typename T>
Tensor<T> EncodeBatch(const EncoderParams<T>& params, std::span<const int> tokens,
                      std::size_t batch, std::size_t steps, T dropout = T(0),
                      Rng* rng = nullptr);

// Single sequence, BOS already prepended.
template <typename T>
EncodedSequence<T> encode(const EncoderParams<T>& params, std::span<const int> tokens,
                          T dropout = T(0), Rng* rng = nullptr);

Tensor<double> SinusoidalPositions(std::size_t positions, std::size_t d_model);

}  // namespace twoway
