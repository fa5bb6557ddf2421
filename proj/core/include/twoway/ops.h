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
#include <cstdint>
#include <span>
#include <vector>

#include "twoway/rng.h"
#include "twoway/tensor.h"

namespace twoway {

enum class Elementwise { kAdd, kMul, kSigmoid, kTanh, kExp, kLog };

// Generic dispatch over the pointwise ops. Unary ops ignore `b`.
template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b = {});

// Rank-2 product. A rank-1 left operand is treated as a single row.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Binary ops take equal shapes, or a trailing vector broadcast over rows.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x);

// Sum over rows of -log softmax(logits)[row, target]. Rows whose target is
// negative are skipped.
template <typename T>
Tensor<T> cross_entropy_sum(const Tensor<T>& logits, std::span<const int> targets);

// Max over `axis` of an [n x d] tensor (axis 0 -> [d], axis 1 -> [n]). The
// gradient goes to the first maximal entry.
template <typename T>
Tensor<T> max_pool_axis(const Tensor<T>& x, std::size_t axis);

// out[s] = max over rows segments[s] of x. Ties resolve to the earliest row in
// the segment's listed order.
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x,
                      const std::vector<std::vector<std::size_t>>& segments);

// Row-wise mean and last-member pooling over the same segment layout.
template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x,
                       const std::vector<std::vector<std::size_t>>& segments);
template <typename T>
Tensor<T> segment_last(const Tensor<T>& x,
                       const std::vector<std::vector<std::size_t>>& segments);

// Last-axis concatenation of two rank-1 or two rank-2 tensors.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
// Column-wise concatenation of rank-2 tensors with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

// out[r] = x[index[r]], or a zero row where index[r] < 0.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> index);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// Inverted dropout; identity when `rate` is zero or `rng` is null.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng* rng);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

}  // namespace twoway
