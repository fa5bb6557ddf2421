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

#include "twoway/grid.h"

#include <chrono>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "twoway/ops.h"
#include "twoway/parallel.h"

namespace twoway {

namespace {

constexpr std::size_t kCellChunkRows = 32;

template <typename T>
inline T Sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Tensor<T> AsRow(const Tensor<T>& x) {
  if (x.rank() == 2) return x;
  return reshape(x, Shape{1, x.numel()});
}

template <typename T>
void CheckSequences(const EncodedSequence<T>& src, const EncodedSequence<T>& tgt) {
  if (!src.states.defined() || !tgt.states.defined() || src.states.rows() < 2 ||
      tgt.states.rows() < 2) {
    throw PreconditionError("grid forward needs J >= 1 and I >= 1 (empty sequence)");
  }
}

template <typename T>
GridState<T> EmptyState(std::size_t src_len, std::size_t tgt_len, std::size_t d_cell) {
  GridState<T> state;
  state.src_len = src_len;
  state.tgt_len = tgt_len;
  state.d_cell = d_cell;
  state.z = Tensor<T>({src_len + 1, tgt_len + 1, d_cell});
  state.c = Tensor<T>({src_len + 1, tgt_len + 1, d_cell});
  return state;
}

template <typename T>
void Store(GridState<T>& state, std::size_t j, std::size_t i, std::span<const T> z,
           std::span<const T> c) {
  const std::size_t at = (j * (state.tgt_len + 1) + i) * state.d_cell;
  std::copy(z.begin(), z.end(), state.z.mutable_data().begin() + at);
  std::copy(c.begin(), c.end(), state.c.mutable_data().begin() + at);
}

template <typename T>
Tensor<T> RowVector(std::span<const T> values) {
  return Tensor<T>(Shape{1, values.size()}, std::vector<T>(values.begin(), values.end()));
}

}  // namespace

const char* GateName(Gate gate) {
  switch (gate) {
    case Gate::kInput: return "input";
    case Gate::kForget: return "forget";
    case Gate::kLambda: return "lambda";
    case Gate::kOutput: return "output";
    case Gate::kCandidate: return "candidate";
  }
  return "?";
}

template <typename T>
TwoDLSTMParams<T> TwoDLSTMParams<T>::Init(std::size_t d_model, std::size_t d_cell, Rng& rng) {
  TwoDLSTMParams p;
  p.d_model = d_model;
  p.d_cell = d_cell;
  const std::size_t gates = kNumGates * d_cell;
  auto fill = [&rng](Tensor<T>& t, double bound) {
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  };
  p.w = Tensor<T>({2 * d_model, gates});
  p.u = Tensor<T>({d_cell, gates});
  p.v = Tensor<T>({d_cell, gates});
  p.b = Tensor<T>({gates});
  fill(p.w, 1.0 / std::sqrt(double(2 * d_model)));
  fill(p.u, 1.0 / std::sqrt(double(2 * d_cell)));
  fill(p.v, 1.0 / std::sqrt(double(2 * d_cell)));
  return p;
}

template <typename T>
TwoDLSTMParams<T> TwoDLSTMParams<T>::Zeros(std::size_t d_model, std::size_t d_cell) {
  TwoDLSTMParams p;
  p.d_model = d_model;
  p.d_cell = d_cell;
  const std::size_t gates = kNumGates * d_cell;
  p.w = Tensor<T>({2 * d_model, gates});
  p.u = Tensor<T>({d_cell, gates});
  p.v = Tensor<T>({d_cell, gates});
  p.b = Tensor<T>({gates});
  return p;
}

template <typename T>
void TwoDLSTMParams<T>::Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn("w", w);
  fn("u", u);
  fn("v", v);
  fn("b", b);
}

namespace {

// Gate nonlinearities and the cell update for one row.
template <typename T>
inline void GateForward(const T* pre, const T* cl, const T* cb, std::size_t d, T* gates, T* c,
                        T* z) {
  for (std::size_t k = 0; k < 4 * d; ++k) gates[k] = Sigmoid(pre[k]);
  for (std::size_t k = 4 * d; k < 5 * d; ++k) gates[k] = std::tanh(pre[k]);
  for (std::size_t k = 0; k < d; ++k) {
    const T in = gates[k], forget = gates[d + k], lambda = gates[2 * d + k];
    const T o = gates[3 * d + k], cand = gates[4 * d + k];
    const T mixed = lambda * cl[k] + (T(1) - lambda) * cb[k];
    c[k] = forget * mixed + in * cand;
    z[k] = o * std::tanh(c[k]);
  }
}

// Accumulates d(pre), d(c_left) and d(c_below) of one row; null targets are
// skipped.
template <typename T>
inline void GateBackward(const T* gates, const T* cl, const T* cb, const T* c, const T* dc_out,
                         const T* dz, std::size_t d, T* dpre, T* dcl, T* dcb) {
  for (std::size_t k = 0; k < d; ++k) {
    const T in = gates[k], forget = gates[d + k], lambda = gates[2 * d + k];
    const T o = gates[3 * d + k], cand = gates[4 * d + k];
    const T left = cl[k], below = cb[k];
    const T mixed = lambda * left + (T(1) - lambda) * below;
    const T tc = std::tanh(c[k]);
    const T dc = dc_out[k] + dz[k] * o * (T(1) - tc * tc);
    const T dmixed = dc * forget;
    if (dpre) {
      dpre[k] += dc * cand * in * (T(1) - in);
      dpre[d + k] += dc * mixed * forget * (T(1) - forget);
      dpre[2 * d + k] += dmixed * (left - below) * lambda * (T(1) - lambda);
      dpre[3 * d + k] += dz[k] * tc * o * (T(1) - o);
      dpre[4 * d + k] += dc * in * (T(1) - cand * cand);
    }
    if (dcl) dcl[k] += dmixed * lambda;
    if (dcb) dcb[k] += dmixed * (T(1) - lambda);
  }
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
std::size_t ChunkCount(std::size_t n) {
  return (n + kCellChunkRows - 1) / kCellChunkRows;
}

}  // namespace

template <typename T>
Tensor<T> lstm2d_cell(const Tensor<T>& pre, const Tensor<T>& c_left, const Tensor<T>& c_below) {
  if (pre.rank() != 2 || c_left.rank() != 2 || c_left.shape() != c_below.shape() ||
      pre.rows() != c_left.rows() || pre.cols() != kNumGates * c_left.cols()) {
    throw DimensionError("lstm2d_cell: pre " + ShapeToString(pre.shape()) + ", c_left " +
                         ShapeToString(c_left.shape()) + ", c_below " +
                         ShapeToString(c_below.shape()));
  }
  const std::size_t n = pre.rows(), d = c_left.cols(), g5 = kNumGates * d;
  std::vector<T> out(n * 2 * d), gates(n * g5);
  const T* p = pre.data().data();
  const T* cl = c_left.data().data();
  const T* cb = c_below.data().data();
  ParallelFor(ChunkCount<T>(n), [&](std::size_t chunk) {
    const std::size_t r_end = std::min(n, (chunk + 1) * kCellChunkRows);
    for (std::size_t r = chunk * kCellChunkRows; r < r_end; ++r) {
      T* cr = out.data() + r * 2 * d;
      GateForward(p + r * g5, cl + r * d, cb + r * d, d, gates.data() + r * g5, cr, cr + d);
    }
  });
  return detail::MakeResult<T>(
      "lstm2d_cell", Shape{n, 2 * d}, std::move(out), {pre, c_left, c_below},
      [n, d, g5, gates = std::move(gates)](Node<T>& self) {
        T* dpre = self.inputs[0]->requires_grad ? self.inputs[0]->GradBuffer().data() : nullptr;
        T* dcl = self.inputs[1]->requires_grad ? self.inputs[1]->GradBuffer().data() : nullptr;
        T* dcb = self.inputs[2]->requires_grad ? self.inputs[2]->GradBuffer().data() : nullptr;
        const T* cl = self.inputs[1]->value.data();
        const T* cb = self.inputs[2]->value.data();
        ParallelFor(ChunkCount<T>(n), [&](std::size_t chunk) {
          const std::size_t r_end = std::min(n, (chunk + 1) * kCellChunkRows);
          for (std::size_t r = chunk * kCellChunkRows; r < r_end; ++r) {
            const T* cr = self.value.data() + r * 2 * d;
            const T* dcr = self.grad.data() + r * 2 * d;
            GateBackward(gates.data() + r * g5, cl + r * d, cb + r * d, cr, dcr, dcr + d, d,
                         dpre ? dpre + r * g5 : nullptr, dcl ? dcl + r * d : nullptr,
                         dcb ? dcb + r * d : nullptr);
          }
        });
      });
}

template <typename T>
Tensor<T> wavefront_step(const Tensor<T>& proj_src, std::span<const std::int64_t> src_index,
                         const Tensor<T>& proj_tgt, std::span<const std::int64_t> tgt_index,
                         const Tensor<T>& prev, std::span<const std::int64_t> left,
                         std::span<const std::int64_t> below, const Tensor<T>& u,
                         const Tensor<T>& v) {
  const std::size_t n = src_index.size();
  const std::size_t d = u.rank() == 2 ? u.rows() : 0, g5 = kNumGates * d;
  if (tgt_index.size() != n || left.size() != n || below.size() != n || u.rank() != 2 ||
      u.cols() != g5 || v.shape() != u.shape() || proj_src.rank() != 2 ||
      proj_src.cols() != g5 || proj_tgt.rank() != 2 || proj_tgt.cols() != g5 ||
      prev.rank() != 2 || prev.cols() != 2 * d) {
    throw DimensionError("wavefront_step: inconsistent shapes (u " + ShapeToString(u.shape()) +
                         ", prev " + ShapeToString(prev.shape()) + ")");
  }
  const std::size_t m = prev.rows();
  auto check = [](std::span<const std::int64_t> idx, std::size_t rows, bool allow_missing,
                  const char* what) {
    for (auto i : idx) {
      if (i >= static_cast<std::int64_t>(rows) || (i < 0 && !allow_missing)) {
        throw IndexError(std::string("wavefront_step: ") + what + " index " +
                         std::to_string(i) + " outside " + std::to_string(rows) + " rows");
      }
    }
  };
  check(src_index, proj_src.rows(), false, "source");
  check(tgt_index, proj_tgt.rows(), false, "target");
  check(left, m, true, "left");
  check(below, m, true, "below");

  // Predecessor states gathered into contiguous blocks; the zero boundary
  // stays zero.
  std::vector<T> zl(n * d), zb(n * d), cl(n * d), cb(n * d);
  const T* pv = prev.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    if (left[r] >= 0) {
      const T* row = pv + left[r] * 2 * d;
      std::copy(row, row + d, cl.begin() + r * d);
      std::copy(row + d, row + 2 * d, zl.begin() + r * d);
    }
    if (below[r] >= 0) {
      const T* row = pv + below[r] * 2 * d;
      std::copy(row, row + d, cb.begin() + r * d);
      std::copy(row + d, row + 2 * d, zb.begin() + r * d);
    }
  }
  std::vector<T> pre(n * g5);
  const T* ps = proj_src.data().data();
  const T* pt = proj_tgt.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* a = ps + src_index[r] * g5;
    const T* b = pt + tgt_index[r] * g5;
    T* out = pre.data() + r * g5;
    for (std::size_t k = 0; k < g5; ++k) out[k] = a[k] + b[k];
  }
  if (m > 0) {
    RowMat<T> rec(n, g5);
    rec.noalias() = ConstMatMap<T>(zl.data(), n, d) * ConstMatMap<T>(u.data().data(), d, g5);
    rec.noalias() += ConstMatMap<T>(zb.data(), n, d) * ConstMatMap<T>(v.data().data(), d, g5);
    MatMap<T>(pre.data(), n, g5) += rec;
  }
  std::vector<T> out(n * 2 * d), gates(n * g5);
  ParallelFor(ChunkCount<T>(n), [&](std::size_t chunk) {
    const std::size_t r_end = std::min(n, (chunk + 1) * kCellChunkRows);
    for (std::size_t r = chunk * kCellChunkRows; r < r_end; ++r) {
      T* cr = out.data() + r * 2 * d;
      GateForward(pre.data() + r * g5, cl.data() + r * d, cb.data() + r * d, d,
                  gates.data() + r * g5, cr, cr + d);
    }
  });

  struct Saved {
    std::vector<std::int64_t> src, tgt, left, below;
    std::vector<T> zl, zb, cl, cb, gates;
  };
  auto saved = std::make_shared<Saved>(
      Saved{{src_index.begin(), src_index.end()}, {tgt_index.begin(), tgt_index.end()},
            {left.begin(), left.end()}, {below.begin(), below.end()}, std::move(zl),
            std::move(zb), std::move(cl), std::move(cb), std::move(gates)});
  return detail::MakeResult<T>(
      "wavefront_step", Shape{n, 2 * d}, std::move(out), {proj_src, proj_tgt, prev, u, v},
      [n, m, d, g5, saved](Node<T>& self) {
        const Saved& s = *saved;
        std::vector<T> dpre(n * g5), dcl(n * d), dcb(n * d);
        ParallelFor(ChunkCount<T>(n), [&](std::size_t chunk) {
          const std::size_t r_end = std::min(n, (chunk + 1) * kCellChunkRows);
          for (std::size_t r = chunk * kCellChunkRows; r < r_end; ++r) {
            const T* cr = self.value.data() + r * 2 * d;
            const T* dcr = self.grad.data() + r * 2 * d;
            GateBackward(s.gates.data() + r * g5, s.cl.data() + r * d, s.cb.data() + r * d, cr,
                         dcr, dcr + d, d, dpre.data() + r * g5, dcl.data() + r * d,
                         dcb.data() + r * d);
          }
        });
        auto scatter = [&](std::size_t input, const std::vector<std::int64_t>& index) {
          if (!self.inputs[input]->requires_grad) return;
          T* g = self.inputs[input]->GradBuffer().data();
          for (std::size_t r = 0; r < n; ++r) {
            T* row = g + index[r] * g5;
            const T* src = dpre.data() + r * g5;
            for (std::size_t k = 0; k < g5; ++k) row[k] += src[k];
          }
        };
        scatter(0, s.src);
        scatter(1, s.tgt);
        if (m == 0) return;
        ConstMatMap<T> dP(dpre.data(), n, g5);
        if (self.inputs[3]->requires_grad) {
          MatMap<T>(self.inputs[3]->GradBuffer().data(), d, g5).noalias() +=
              ConstMatMap<T>(s.zl.data(), n, d).transpose() * dP;
        }
        if (self.inputs[4]->requires_grad) {
          MatMap<T>(self.inputs[4]->GradBuffer().data(), d, g5).noalias() +=
              ConstMatMap<T>(s.zb.data(), n, d).transpose() * dP;
        }
        if (self.inputs[2]->requires_grad) {
          RowMat<T> dzl(n, d), dzb(n, d);
          dzl.noalias() = dP * ConstMatMap<T>(self.inputs[3]->value.data(), d, g5).transpose();
          dzb.noalias() = dP * ConstMatMap<T>(self.inputs[4]->value.data(), d, g5).transpose();
          T* g = self.inputs[2]->GradBuffer().data();
          for (std::size_t r = 0; r < n; ++r) {
            if (s.left[r] >= 0) {
              T* row = g + s.left[r] * 2 * d;
              for (std::size_t k = 0; k < d; ++k) {
                row[k] += dcl[r * d + k];
                row[d + k] += dzl(r, k);
              }
            }
            if (s.below[r] >= 0) {
              T* row = g + s.below[r] * 2 * d;
              for (std::size_t k = 0; k < d; ++k) {
                row[k] += dcb[r * d + k];
                row[d + k] += dzb(r, k);
              }
            }
          }
        }
      });
}

template <typename T>
CellOutput<T> cell_step(const TwoDLSTMParams<T>& params, const Tensor<T>& x,
                        const Tensor<T>& z_left, const Tensor<T>& z_below,
                        const Tensor<T>& c_left, const Tensor<T>& c_below) {
  const std::size_t d = params.d_cell;
  if (x.numel() != 2 * params.d_model || z_left.numel() != d || z_below.numel() != d ||
      c_left.numel() != d || c_below.numel() != d) {
    throw DimensionError("cell_step: expected x of width " +
                         std::to_string(2 * params.d_model) + " and states of width " +
                         std::to_string(d));
  }
  Tensor<T> pre = add(add(matmul(AsRow(x), params.w),
                          add(matmul(AsRow(z_left), params.u), matmul(AsRow(z_below), params.v))),
                      params.b);
  Tensor<T> cz = lstm2d_cell(pre, AsRow(c_left), AsRow(c_below));
  const bool rank1 = x.rank() == 1;
  CellOutput<T> out{slice_cols(cz, d, 2 * d), slice_cols(cz, 0, d)};
  if (rank1) {
    out.z = reshape(out.z, Shape{d});
    out.c = reshape(out.c, Shape{d});
  }
  return out;
}

template <typename T>
WavefrontGrid<T> WavefrontGrid<T>::Forward(const TwoDLSTMParams<T>& params,
                                           const Tensor<T>& src_states, std::size_t src_steps,
                                           const Tensor<T>& tgt_states, std::size_t tgt_steps,
                                           std::size_t batch, std::size_t src_len,
                                           std::size_t tgt_len) {
  if (src_len == 0 || tgt_len == 0) {
    throw PreconditionError("grid forward needs J >= 1 and I >= 1 (empty sequence)");
  }
  if (src_len > src_steps || tgt_len > tgt_steps ||
      src_states.rows() != batch * src_steps || tgt_states.rows() != batch * tgt_steps) {
    throw DimensionError("WavefrontGrid: encoder states do not cover the lattice");
  }
  const std::size_t dm = params.d_model, dc = params.d_cell;
  WavefrontGrid grid;
  grid.batch_ = batch;
  grid.src_len_ = src_len;
  grid.tgt_len_ = tgt_len;
  grid.d_cell_ = dc;

  // The input projection splits into a source part and a target part, so
  // each encoder state is projected once rather than once per cell.
  Tensor<T> proj_src = matmul(src_states, slice_rows(params.w, 0, dm));
  Tensor<T> proj_tgt = add(matmul(tgt_states, slice_rows(params.w, dm, 2 * dm)), params.b);

  std::size_t offset = 0;
  std::size_t prev_first = 0;
  Tensor<T> prev({0, 2 * dc});
  std::vector<std::int64_t> idx_src, idx_tgt, idx_left, idx_below;
  for (std::size_t s = 2; s <= src_len + tgt_len; ++s) {
    const std::size_t first = s > tgt_len + 1 ? s - tgt_len : 1;
    const std::size_t last = std::min(src_len, s - 1);
    const std::size_t n = (last - first + 1) * batch;
    idx_src.resize(n);
    idx_tgt.resize(n);
    idx_left.resize(n);
    idx_below.resize(n);
    for (std::size_t j = first; j <= last; ++j) {
      const std::size_t i = s - j;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t r = (j - first) * batch + b;
        idx_src[r] = static_cast<std::int64_t>(b * src_steps + j - 1);
        idx_tgt[r] = static_cast<std::int64_t>(b * tgt_steps + i - 1);
        idx_left[r] = j > 1 ? static_cast<std::int64_t>((j - 1 - prev_first) * batch + b) : -1;
        idx_below[r] = i > 1 ? static_cast<std::int64_t>((j - prev_first) * batch + b) : -1;
      }
    }
    prev = wavefront_step(proj_src, std::span<const std::int64_t>(idx_src), proj_tgt,
                          std::span<const std::int64_t>(idx_tgt), prev,
                          std::span<const std::int64_t>(idx_left),
                          std::span<const std::int64_t>(idx_below), params.u, params.v);
    grid.cz_diag_.push_back(prev);
    grid.diag_offset_.push_back(offset);
    grid.diag_first_j_.push_back(first);
    offset += n;
    prev_first = first;
  }
  return grid;
}

template <typename T>
std::size_t WavefrontGrid<T>::RowOf(std::size_t b, std::size_t j, std::size_t i) const {
  const std::size_t diag = j + i - 2;
  return diag_offset_[diag] + (j - diag_first_j_[diag]) * batch_ + b;
}

template <typename T>
Tensor<T> WavefrontGrid<T>::hidden_states() const {
  return slice_cols(concat_rows(cz_diag_), d_cell_, 2 * d_cell_);
}

template <typename T>
GridState<T> WavefrontGrid<T>::ToState(std::size_t b, std::size_t src_len,
                                       std::size_t tgt_len) const {
  GridState<T> state = EmptyState<T>(src_len, tgt_len, d_cell_);
  for (std::size_t j = 1; j <= src_len; ++j) {
    for (std::size_t i = 1; i <= tgt_len; ++i) {
      const std::size_t diag = j + i - 2;
      const std::size_t r = (j - diag_first_j_[diag]) * batch_ + b;
      auto row = cz_diag_[diag].data().subspan(r * 2 * d_cell_, 2 * d_cell_);
      Store<T>(state, j, i, row.subspan(d_cell_, d_cell_), row.subspan(0, d_cell_));
    }
  }
  state.phases = phases();
  return state;
}

template <typename T>
GridState<T> forward_diagonal(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                              const EncodedSequence<T>& tgt) {
  CheckSequences(src, tgt);
  const std::size_t J = src.states.rows() - 1, I = tgt.states.rows() - 1;
  auto grid = WavefrontGrid<T>::Forward(params, src.states, J + 1, tgt.states, I + 1, 1, J, I);
  return grid.ToState(0, J, I);
}

template <typename T>
GridState<T> forward_naive(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                           const EncodedSequence<T>& tgt) {
  CheckSequences(src, tgt);
  const std::size_t J = src.states.rows() - 1, I = tgt.states.rows() - 1;
  const std::size_t dm = params.d_model, dc = params.d_cell;
  GridState<T> state = EmptyState<T>(J, I, dc);
  auto src_vals = src.states.data();
  auto tgt_vals = tgt.states.data();
  auto z = state.z.data();
  auto c = state.c.data();
  auto at = [&](std::size_t j, std::size_t i) { return (j * (I + 1) + i) * dc; };
  for (std::size_t j = 1; j <= J; ++j) {
    for (std::size_t i = 1; i <= I; ++i) {
      Tensor<T> x = concat(RowVector<T>(src_vals.subspan((j - 1) * dm, dm)),
                           RowVector<T>(tgt_vals.subspan((i - 1) * dm, dm)));
      auto out = cell_step(params, x, RowVector<T>(z.subspan(at(j - 1, i), dc)),
                           RowVector<T>(z.subspan(at(j, i - 1), dc)),
                           RowVector<T>(c.subspan(at(j - 1, i), dc)),
                           RowVector<T>(c.subspan(at(j, i - 1), dc)));
      Store<T>(state, j, i, out.z.data(), out.c.data());
      ++state.phases;
    }
  }
  return state;
}

template <typename T>
GridLine<T> ZeroLine(std::size_t streams, std::size_t len, std::size_t d_cell) {
  return {Tensor<T>({streams, (len + 1) * d_cell}), Tensor<T>({streams, (len + 1) * d_cell})};
}

template <typename T>
LineProjections<T> ProjectSource(const TwoDLSTMParams<T>& params, const Tensor<T>& src_states,
                                 std::size_t src_len) {
  if (src_states.rows() < src_len) throw DimensionError("ProjectSource: too few states");
  const std::size_t dm = params.d_model;
  Tensor<T> proj = matmul(slice_rows(src_states, 0, src_len), slice_rows(params.w, 0, dm));
  LineProjections<T> out;
  out.len = src_len;
  for (std::size_t k = 0; k < src_len; ++k) {
    out.fixed.push_back(reshape(slice_rows(proj, k, k + 1), Shape{proj.cols()}));
  }
  return out;
}

template <typename T>
LineProjections<T> ProjectTarget(const TwoDLSTMParams<T>& params, const Tensor<T>& tgt_states,
                                 std::size_t tgt_len) {
  if (tgt_states.rows() < tgt_len) throw DimensionError("ProjectTarget: too few states");
  const std::size_t dm = params.d_model;
  Tensor<T> proj = add(matmul(slice_rows(tgt_states, 0, tgt_len),
                              slice_rows(params.w, dm, 2 * dm)),
                       params.b);
  LineProjections<T> out;
  out.len = tgt_len;
  for (std::size_t k = 0; k < tgt_len; ++k) {
    out.fixed.push_back(reshape(slice_rows(proj, k, k + 1), Shape{proj.cols()}));
  }
  return out;
}

namespace {

// Shared streaming loop. For rows the in-line predecessor is the left
// neighbour and the previous line supplies the cell below; for columns the
// roles swap.
template <typename T>
GridLine<T> StreamLine(const TwoDLSTMParams<T>& params, const LineProjections<T>& fixed,
                       const Tensor<T>& line_proj, const GridLine<T>& prev, bool rows) {
  const std::size_t dc = params.d_cell, len = fixed.len, n = line_proj.rows();
  if (prev.z.rows() != n || prev.z.cols() != (len + 1) * dc || prev.c.shape() != prev.z.shape()) {
    throw DimensionError("stream: previous line has shape " + ShapeToString(prev.z.shape()) +
                         ", expected [" + std::to_string(n) + "x" +
                         std::to_string((len + 1) * dc) + "]");
  }
  std::vector<Tensor<T>> zs{Tensor<T>({n, dc})}, cs{Tensor<T>({n, dc})};
  for (std::size_t k = 1; k <= len; ++k) {
    Tensor<T> z_prev = slice_cols(prev.z, k * dc, (k + 1) * dc);
    Tensor<T> c_prev = slice_cols(prev.c, k * dc, (k + 1) * dc);
    const Tensor<T>& z_line = zs.back();
    const Tensor<T>& c_line = cs.back();
    Tensor<T> base = add(line_proj, fixed.fixed[k - 1]);
    Tensor<T> rec = rows ? add(matmul(z_line, params.u), matmul(z_prev, params.v))
                         : add(matmul(z_prev, params.u), matmul(z_line, params.v));
    Tensor<T> cz = rows ? lstm2d_cell(add(base, rec), c_line, c_prev)
                        : lstm2d_cell(add(base, rec), c_prev, c_line);
    cs.push_back(slice_cols(cz, 0, dc));
    zs.push_back(slice_cols(cz, dc, 2 * dc));
  }
  return {concat_cols(zs), concat_cols(cs)};
}

}  // namespace

template <typename T>
GridLine<T> StreamRow(const TwoDLSTMParams<T>& params, const LineProjections<T>& src,
                      const Tensor<T>& s_prev, const GridLine<T>& prev_row) {
  const std::size_t dm = params.d_model;
  Tensor<T> line = add(matmul(AsRow(s_prev), slice_rows(params.w, dm, 2 * dm)), params.b);
  return StreamLine(params, src, line, prev_row, true);
}

template <typename T>
GridLine<T> StreamColumn(const TwoDLSTMParams<T>& params, const LineProjections<T>& tgt,
                         const Tensor<T>& h_prev, const GridLine<T>& prev_col) {
  Tensor<T> line = matmul(AsRow(h_prev), slice_rows(params.w, 0, params.d_model));
  return StreamLine(params, tgt, line, prev_col, false);
}

template <typename T>
GridLine<T> forward_row(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                        const Tensor<T>& s_prev, const GridLine<T>& prev_row) {
  if (src.states.rows() < 2) throw PreconditionError("forward_row: empty source");
  const std::size_t J = src.states.rows() - 1;
  if (prev_row.z.cols() != (J + 1) * params.d_cell) {
    throw DimensionError("forward_row: previous row length does not match the source (J+1=" +
                         std::to_string(J + 1) + ")");
  }
  return StreamRow(params, ProjectSource(params, src.states, J), s_prev, prev_row);
}

template <typename T>
GridLine<T> forward_column(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& tgt,
                           const Tensor<T>& h_prev, const GridLine<T>& prev_col) {
  if (tgt.states.rows() < 2) throw PreconditionError("forward_column: empty target");
  const std::size_t I = tgt.states.rows() - 1;
  if (prev_col.z.cols() != (I + 1) * params.d_cell) {
    throw DimensionError("forward_column: previous column length does not match the target (I+1=" +
                         std::to_string(I + 1) + ")");
  }
  return StreamColumn(params, ProjectTarget(params, tgt.states, I), h_prev, prev_col);
}

template <typename T>
GridState<T> forward_rows(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                          const EncodedSequence<T>& tgt) {
  CheckSequences(src, tgt);
  const std::size_t J = src.states.rows() - 1, I = tgt.states.rows() - 1;
  const std::size_t dc = params.d_cell;
  GridState<T> state = EmptyState<T>(J, I, dc);
  auto proj = ProjectSource(params, src.states, J);
  GridLine<T> row = ZeroLine<T>(1, J, dc);
  for (std::size_t i = 1; i <= I; ++i) {
    row = StreamRow(params, proj, slice_rows(tgt.states, i - 1, i), row);
    for (std::size_t j = 1; j <= J; ++j) {
      Store<T>(state, j, i, row.z.data().subspan(j * dc, dc), row.c.data().subspan(j * dc, dc));
    }
    state.phases += J;
  }
  return state;
}

template <typename T>
GridState<T> forward_columns(const TwoDLSTMParams<T>& params, const EncodedSequence<T>& src,
                             const EncodedSequence<T>& tgt) {
  CheckSequences(src, tgt);
  const std::size_t J = src.states.rows() - 1, I = tgt.states.rows() - 1;
  const std::size_t dc = params.d_cell;
  GridState<T> state = EmptyState<T>(J, I, dc);
  auto proj = ProjectTarget(params, tgt.states, I);
  GridLine<T> col = ZeroLine<T>(1, I, dc);
  for (std::size_t j = 1; j <= J; ++j) {
    col = StreamColumn(params, proj, slice_rows(src.states, j - 1, j), col);
    for (std::size_t i = 1; i <= I; ++i) {
      Store<T>(state, j, i, col.z.data().subspan(i * dc, dc), col.c.data().subspan(i * dc, dc));
    }
    state.phases += I;
  }
  return state;
}

const char* ScheduleName(Schedule schedule) {
  switch (schedule) {
    case Schedule::kDiagonal: return "diagonal";
    case Schedule::kNaive: return "naive";
    case Schedule::kRow: return "row";
    case Schedule::kColumn: return "column";
  }
  return "?";
}

BenchRow BenchSchedule(Schedule schedule, std::size_t src_len, std::size_t tgt_len,
                       std::size_t d_cell, std::size_t d_model, std::size_t repeats,
                       std::uint64_t seed) {
  Rng rng(seed);
  auto params = TwoDLSTMParams<float>::Init(d_model, d_cell, rng);
  auto random_states = [&](std::size_t rows) {
    EncodedSequence<float> seq;
    seq.states = Tensor<float>({rows, d_model});
    for (auto& v : seq.states.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
    seq.mask.assign(rows, true);
    return seq;
  };
  auto src = random_states(src_len + 1);
  auto tgt = random_states(tgt_len + 1);
  NoGradGuard no_grad;
  BenchRow row{ScheduleName(schedule), src_len, tgt_len, d_cell, 0, 0.0};
  repeats = std::max<std::size_t>(repeats, 1);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t r = 0; r < repeats; ++r) {
    GridState<float> state;
    switch (schedule) {
      case Schedule::kDiagonal: state = forward_diagonal(params, src, tgt); break;
      case Schedule::kNaive: state = forward_naive(params, src, tgt); break;
      case Schedule::kRow: state = forward_rows(params, src, tgt); break;
      case Schedule::kColumn: state = forward_columns(params, src, tgt); break;
    }
    row.phases = state.phases;
  }
  const auto stop = std::chrono::steady_clock::now();
  row.millis = std::chrono::duration<double, std::milli>(stop - start).count() / double(repeats);
  return row;
}

std::string BenchCsvHeader() { return "schedule,J,I,d_cell,phases,millis"; }

std::string ToCsv(const BenchRow& row) {
  std::ostringstream out;
  out << row.schedule << ',' << row.src_len << ',' << row.tgt_len << ',' << row.d_cell << ','
      << row.phases << ',' << row.millis;
  return out.str();
}

#define TWOWAY_INSTANTIATE_GRID(T)                                                          \
  template struct TwoDLSTMParams<T>;                                                        \
  template class WavefrontGrid<T>;                                                          \
  template Tensor<T> lstm2d_cell(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);     \
  template Tensor<T> wavefront_step(const Tensor<T>&, std::span<const std::int64_t>,        \
                                    const Tensor<T>&, std::span<const std::int64_t>,        \
                                    const Tensor<T>&, std::span<const std::int64_t>,        \
                                    std::span<const std::int64_t>, const Tensor<T>&,        \
                                    const Tensor<T>&);                                      \
  template CellOutput<T> cell_step(const TwoDLSTMParams<T>&, const Tensor<T>&,              \
                                   const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                   const Tensor<T>&);                                       \
  template GridState<T> forward_diagonal(const TwoDLSTMParams<T>&,                          \
                                         const EncodedSequence<T>&,                         \
                                         const EncodedSequence<T>&);                        \
  template GridState<T> forward_naive(const TwoDLSTMParams<T>&, const EncodedSequence<T>&,  \
                                      const EncodedSequence<T>&);                           \
  template GridState<T> forward_rows(const TwoDLSTMParams<T>&, const EncodedSequence<T>&,   \
                                     const EncodedSequence<T>&);                            \
  template GridState<T> forward_columns(const TwoDLSTMParams<T>&, const EncodedSequence<T>&, \
                                        const EncodedSequence<T>&);                         \
  template GridLine<T> ZeroLine(std::size_t, std::size_t, std::size_t);                     \
  template LineProjections<T> ProjectSource(const TwoDLSTMParams<T>&, const Tensor<T>&,     \
                                            std::size_t);                                   \
  template LineProjections<T> ProjectTarget(const TwoDLSTMParams<T>&, const Tensor<T>&,     \
                                            std::size_t);                                   \
  template GridLine<T> StreamRow(const TwoDLSTMParams<T>&, const LineProjections<T>&,       \
                                 const Tensor<T>&, const GridLine<T>&);                     \
  template GridLine<T> StreamColumn(const TwoDLSTMParams<T>&, const LineProjections<T>&,    \
                                    const Tensor<T>&, const GridLine<T>&);                  \
  template GridLine<T> forward_row(const TwoDLSTMParams<T>&, const EncodedSequence<T>&,     \
                                   const Tensor<T>&, const GridLine<T>&);                   \
  template GridLine<T> forward_column(const TwoDLSTMParams<T>&, const EncodedSequence<T>&,  \
                                      const Tensor<T>&, const GridLine<T>&);

TWOWAY_INSTANTIATE_GRID(float)
TWOWAY_INSTANTIATE_GRID(double)

#undef TWOWAY_INSTANTIATE_GRID

}  // namespace twoway
