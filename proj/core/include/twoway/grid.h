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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "twoway/encoder.h"
#include "twoway/rng.h"
#include "twoway/tensor.h"

namespace twoway {

// Column-block order of the packed gate matrices.
enum class Gate : std::size_t { kInput = 0, kForget, kLambda, kOutput, kCandidate };
inline constexpr std::size_t kNumGates = 5;
const char* GateName(Gate gate);

// 2DLSTM weights with the five gates packed side by side. Rows [0, d_model)
// of `w` read the source state, rows [d_model, 2*d_model) the target state.
template <typename T>
struct TwoDLSTMParams {
  std::size_t d_model = 0;
  std::size_t d_cell = 0;
  Tensor<T> w;  // [2*d_model x 5*d_cell]
  Tensor<T> u;  // [d_cell x 5*d_cell], left (horizontal) predecessor
  Tensor<T> v;  // [d_cell x 5*d_cell], lower (vertical) predecessor
  Tensor<T> b;  // [5*d_cell]

  static TwoDLSTMParams Init(std::size_t d_model, std::size_t d_cell, Rng& rng);
  static TwoDLSTMParams Zeros(std::size_t d_model, std::size_t d_cell);

  void Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
};

// Lattice of hidden and cell states; index 0 on either axis is the zero
// boundary. Shapes are [(J+1) x (I+1) x d_cell].
template <typename T>
struct GridState {
  std::size_t src_len = 0;  // J
  std::size_t tgt_len = 0;  // I
  std::size_t d_cell = 0;
  Tensor<T> z;
  Tensor<T> c;
  // Sequential phases the producing schedule needed.
  std::size_t phases = 0;

  T z_at(std::size_t j, std::size_t i, std::size_t k) const {
    return z[(j * (tgt_len + 1) + i) * d_cell + k];
  }
  T c_at(std::size_t j, std::size_t i, std::size_t k) const {
    return c[(j * (tgt_len + 1) + i) * d_cell + k];
  }
};

// One row (fixed i) or column (fixed j) of the lattice for n streams side by
// side: z and c are [n x (len+1)*d_cell] with slot 0 the boundary.
template <typename T>
struct GridLine {
  Tensor<T> z;
  Tensor<T> c;
};

template <typename T>
struct CellOutput {
  Tensor<T> z;
  Tensor<T> c;
};

// Fused gate nonlinearity. Inputs are the gate pre-activations [n x 5*d] and
// the two predecessor cell states [n x d]; the output is [n x 2*d] holding
// the new cell state followed by the new hidden state.
template <typename T>
Tensor<T> lstm2d_cell(const Tensor<T>& pre, const Tensor<T>& c_left,
                      const Tensor<T>& c_below);

// One anti-diagonal of the batched lattice as a single op. Row r combines
// source projection row src_index[r], target projection row tgt_index[r] and
// the previous diagonal's rows left[r] and below[r] (c then z, -1 for the zero
// boundary). Returns [n x 2*d] holding c then z.
template <typename T>
Tensor<T> wavefront_step(const Tensor<T>& proj_src, std::span<const std::int64_t> src_index,
                         const Tensor<T>& proj_tgt, std::span<const std::int64_t> tgt_index,
                         const Tensor<T>& prev, std::span<const std::int64_t> left,
                         std::span<const std::int64_t> below, const Tensor<T>& u,
                         const Tensor<T>& v);

// A single lattice cell; x is [h_{j-1}; s_{i-1}] of width 2*d_model. Vectors
// may be rank 1 or [1 x width].
template <typename T>
CellOutput<T> cell_step(const TwoDLSTMParams<T>& params, const Tensor<T>& x,
                        const Tensor<T>& z_left, const Tensor<T>& z_below,
                        const Tensor<T>& c_left, const Tensor<T>& c_below);

// Differentiable, batched wavefront evaluation used for training.
// `src_states` holds `batch` sequences of `src_steps` encoder rows each and
// `tgt_states` likewise; column j reads source row j-1 and row i reads target
// row i-1. Cells of one anti-diagonal are evaluated together.
template <typename T>
class WavefrontGrid {
 public:
  static WavefrontGrid Forward(const TwoDLSTMParams<T>& params, const Tensor<T>& src_states,
                               std::size_t src_steps, const Tensor<T>& tgt_states,
                               std::size_t tgt_steps, std::size_t batch, std::size_t src_len,
                               std::size_t tgt_len);

  std::size_t batch() const { return batch_; }
  std::size_t src_len() const { return src_len_; }
  std::size_t tgt_len() const { return tgt_len_; }
  std::size_t phases() const { return cz_diag_.size(); }

  // Row of hidden_states() holding z[j, i] of example b (1-based j, i).
  std::size_t RowOf(std::size_t b, std::size_t j, std::size_t i) const;
  // All hidden states stacked diagonal after diagonal.
  Tensor<T> hidden_states() const;
  GridState<T> ToState(std::size_t b, std::size_t src_len, std::size_t tgt_len) const;

 private:
  std::size_t batch_ = 0, src_len_ = 0, tgt_len_ = 0, d_cell_ = 0;
  std::vector<Tensor<T>> cz_diag_;  // [cells x 2*d_cell] per diagonal, c then z
  std::vector<std::size_t> diag_offset_;  // first row of each diagonal in hidden_states()
  std::vector<std::size_t> diag_first_j_;
};

// Full lattice by anti-diagonal wavefront: J+I-1 sequential phases.
template <typename T>
GridState<T> forward_diagonal(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                              const EncodedSequence<T>& tgt);

// Reference schedule: one cell per phase, column-major double loop.
template <typename T>
GridState<T> forward_naive(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                           const EncodedSequence<T>& tgt);

// Streams the lattice row by row (source-to-target decoding order).
template <typename T>
GridState<T> forward_rows(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                          const EncodedSequence<T>& tgt);

// Streams the lattice column by column (target-to-source decoding order).
template <typename T>
GridState<T> forward_columns(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                             const EncodedSequence<T>& tgt);

// Precomputed per-sequence projections for streaming. `fixed` holds the input
// projection of every conditioning position.
template <typename T>
struct LineProjections {
  std::size_t len = 0;  // number of lattice cells along the line
  std::vector<Tensor<T>> fixed;  // len rank-1 tensors of width 5*d_cell
};

// Projects conditioning states (source for rows, target for columns) that
// stay fixed while the other side grows.
template <typename T>
LineProjections<T> ProjectSource(const TwoDLSTMParams<T>& params, const Tensor<T>& src_states,
                                 std::size_t src_len);
template <typename T>
LineProjections<T> ProjectTarget(const TwoDLSTMParams<T>& params, const Tensor<T>& tgt_states,
                                 std::size_t tgt_len);

// Row i from row i-1 for n streams. `s_prev` is [n x d_model] (s_{i-1}).
template <typename T>
GridLine<T> StreamRow(const TwoDLSTMParams<T>& params, const LineProjections<T>& src,
                      const Tensor<T>& s_prev, const GridLine<T>& prev_row);

// Column j from column j-1 for n streams. `h_prev` is [n x d_model] (h_{j-1}).
template <typename T>
GridLine<T> StreamColumn(const TwoDLSTMParams<T>& params, const LineProjections<T>& tgt,
                         const Tensor<T>& h_prev, const GridLine<T>& prev_col);

// All-zero boundary line for n streams of `len` cells.
template <typename T>
GridLine<T> ZeroLine(std::size_t streams, std::size_t len, std::size_t d_cell);

// Single-stream conveniences over StreamRow / StreamColumn.
template <typename T>
GridLine<T> forward_row(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                        const Tensor<T>& s_prev, const GridLine<T>& prev_row);
template <typename T>
GridLine<T> forward_column(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& tgt,
                           const Tensor<T>& h_prev, const GridLine<T>& prev_col);

enum class Schedule { kDiagonal, kNaive, kRow, kColumn };
const char* ScheduleName(Schedule schedule);

struct BenchRow {
  std::string schedule;
  std::size_t src_len = 0, tgt_len = 0, d_cell = 0;
  std::size_t phases = 0;
  double millis = 0.0;
};

// Times one schedule on random encoder states; the CSV hook behind `bench`.
BenchRow BenchSchedule(Schedule schedule, std::size_t src_len, std::size_t tgt_len,
                       std::size_t d_cell, std::size_t d_model, std::size_t repeats,
                       std::uint64_t seed);
std::string BenchCsvHeader();
std::string ToCsv(const BenchRow& row);

}  // namespace twoway
