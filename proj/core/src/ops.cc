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

#include "twoway/ops.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace twoway {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using detail::MakeResult;

template <typename T>
bool NeedsGrad(const Node<T>& self, std::size_t k) {
  return self.inputs[k]->requires_grad;
}

template <typename T>
std::vector<T>& InputGrad(Node<T>& self, std::size_t k) {
  return self.inputs[k]->GradBuffer();
}

enum class Broadcast { kNone, kRows };

template <typename T>
Broadcast CheckBinary(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.rank() == 1 && a.rank() == 2 && a.cols() == b.numel()) {
    return Broadcast::kRows;
  }
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       ShapeToString(a.shape()) + " and " +
                       ShapeToString(b.shape()));
}

template <typename T>
Shape MatShape(const Tensor<T>& x) {
  if (x.rank() == 2) return x.shape();
  if (x.rank() == 1) return {1, x.numel()};
  throw DimensionError("expected a rank-1 or rank-2 tensor, got " +
                       ShapeToString(x.shape()));
}

// Applies f elementwise and records a unary node whose local derivative is
// computed from (input, output) by `df`.
template <typename T, typename F, typename DF>
Tensor<T> Unary(const char* op, const Tensor<T>& x, F f, DF df) {
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return MakeResult<T>(op, x.shape(), std::move(out), {x}, [df](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    const auto& xin = self.inputs[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * df(xin[i], self.value[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Shape sa = MatShape(a);
  if (b.rank() != 2 || sa[1] != b.shape()[0]) {
    throw DimensionError("matmul: inner dimensions differ for " +
                         ShapeToString(a.shape()) + " and " +
                         ShapeToString(b.shape()));
  }
  const std::size_t m = sa[0], k = sa[1], n = b.shape()[1];
  std::vector<T> out(m * n);
  ConstMatMap<T> A(a.data().data(), m, k);
  ConstMatMap<T> B(b.data().data(), k, n);
  MatMap<T> Y(out.data(), m, n);
  Y.noalias() = A * B;
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return MakeResult<T>("matmul", std::move(shape), std::move(out), {a, b},
                       [m, k, n](Node<T>& self) {
    ConstMatMap<T> dY(self.grad.data(), m, n);
    if (NeedsGrad(self, 0)) {
      MatMap<T> dA(InputGrad(self, 0).data(), m, k);
      ConstMatMap<T> B(self.inputs[1]->value.data(), k, n);
      dA.noalias() += dY * B.transpose();
    }
    if (NeedsGrad(self, 1)) {
      MatMap<T> dB(InputGrad(self, 1).data(), k, n);
      ConstMatMap<T> A(self.inputs[0]->value.data(), m, k);
      dB.noalias() += A.transpose() * dY;
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode = CheckBinary("add", a, b);
  const std::size_t n = a.numel(), width = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  if (mode == Broadcast::kNone) {
    for (std::size_t i = 0; i < n; ++i) out[i] += bd[i];
  } else {
    for (std::size_t row = 0; row < n; row += width) {
      for (std::size_t k = 0; k < width; ++k) out[row + k] += bd[k];
    }
  }
  return MakeResult<T>("add", a.shape(), std::move(out), {a, b},
                       [mode, n, width](Node<T>& self) {
    if (NeedsGrad(self, 0)) {
      auto& ga = InputGrad(self, 0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (NeedsGrad(self, 1)) {
      auto& gb = InputGrad(self, 1);
      if (mode == Broadcast::kNone) {
        for (std::size_t i = 0; i < n; ++i) gb[i] += self.grad[i];
      } else {
        for (std::size_t row = 0; row < n; row += width) {
          for (std::size_t k = 0; k < width; ++k) gb[k] += self.grad[row + k];
        }
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode = CheckBinary("sub", a, b);
  const std::size_t n = a.numel(), width = b.numel();
  std::vector<T> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] -= bd[mode == Broadcast::kNone ? i : i % width];
  }
  return MakeResult<T>("sub", a.shape(), std::move(out), {a, b},
                       [mode, n, width](Node<T>& self) {
    if (NeedsGrad(self, 0)) {
      auto& ga = InputGrad(self, 0);
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    }
    if (NeedsGrad(self, 1)) {
      auto& gb = InputGrad(self, 1);
      for (std::size_t i = 0; i < n; ++i) {
        gb[mode == Broadcast::kNone ? i : i % width] -= self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  Broadcast mode = CheckBinary("mul", a, b);
  const std::size_t n = a.numel(), width = b.numel();
  std::vector<T> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = ad[i] * bd[mode == Broadcast::kNone ? i : i % width];
  }
  return MakeResult<T>("mul", a.shape(), std::move(out), {a, b},
                       [mode, n, width](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (NeedsGrad(self, 0)) {
      auto& ga = InputGrad(self, 0);
      for (std::size_t i = 0; i < n; ++i) {
        ga[i] += self.grad[i] * bv[mode == Broadcast::kNone ? i : i % width];
      }
    }
    if (NeedsGrad(self, 1)) {
      auto& gb = InputGrad(self, 1);
      for (std::size_t i = 0; i < n; ++i) {
        gb[mode == Broadcast::kNone ? i : i % width] += self.grad[i] * av[i];
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return Unary<T>("scale", a, [factor](T x) { return x * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return Unary<T>("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return Unary<T>("tanh", x, [](T v) { return std::tanh(v); },
                  [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return Unary<T>("exp", x, [](T v) { return std::exp(v); },
                  [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.data()) {
    if (!(v > T(0))) {
      throw DomainError("log of non-positive value " + std::to_string(v));
    }
  }
  return Unary<T>("log", x, [](T v) { return std::log(v); },
                  [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return Unary<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> elementwise(Elementwise op, const Tensor<T>& a, const Tensor<T>& b) {
  switch (op) {
    case Elementwise::kAdd: return add(a, b);
    case Elementwise::kMul: return mul(a, b);
    case Elementwise::kSigmoid: return sigmoid(a);
    case Elementwise::kTanh: return tanh(a);
    case Elementwise::kExp: return exp(a);
    case Elementwise::kLog: return log(a);
  }
  throw PreconditionError("unknown elementwise op");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return MakeResult<T>("sum", Shape{}, {total}, {x}, [](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (auto& g : gx) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v * v;
  return MakeResult<T>("sum_squares", Shape{}, {total}, {x}, [](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * xv[i] * self.grad[0];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Shape ms = MatShape(x);
  const std::size_t n = ms[0], v = ms[1];
  if (v == 0) throw PreconditionError("softmax_rows: empty rows");
  std::vector<T> out(n * v);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xd.data() + r * v;
    T* y = out.data() + r * v;
    T mx = *std::max_element(row, row + v);
    T total = T(0);
    for (std::size_t c = 0; c < v; ++c) total += (y[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < v; ++c) y[c] /= total;
  }
  return MakeResult<T>("softmax_rows", x.shape(), std::move(out), {x},
                       [n, v](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const T* y = self.value.data() + r * v;
      const T* dy = self.grad.data() + r * v;
      T dot = T(0);
      for (std::size_t c = 0; c < v; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < v; ++c) gx[r * v + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  Shape ms = MatShape(x);
  const std::size_t n = ms[0], v = ms[1];
  if (v == 0) throw PreconditionError("log_softmax_rows: empty rows");
  std::vector<T> out(n * v);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xd.data() + r * v;
    T mx = *std::max_element(row, row + v);
    T total = T(0);
    for (std::size_t c = 0; c < v; ++c) total += std::exp(row[c] - mx);
    T lse = mx + std::log(total);
    for (std::size_t c = 0; c < v; ++c) out[r * v + c] = row[c] - lse;
  }
  return MakeResult<T>("log_softmax_rows", x.shape(), std::move(out), {x},
                       [n, v](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const T* ly = self.value.data() + r * v;
      const T* dy = self.grad.data() + r * v;
      T total = T(0);
      for (std::size_t c = 0; c < v; ++c) total += dy[c];
      for (std::size_t c = 0; c < v; ++c) {
        gx[r * v + c] += dy[c] - std::exp(ly[c]) * total;
      }
    }
  });
}

template <typename T>
Tensor<T> cross_entropy_sum(const Tensor<T>& logits, std::span<const int> targets) {
  Shape ms = MatShape(logits);
  const std::size_t n = ms[0], v = ms[1];
  if (targets.size() != n) {
    throw DimensionError("cross_entropy_sum: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(n) + " rows");
  }
  std::vector<T> probs(n * v, T(0));
  T total = T(0);
  auto xd = logits.data();
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= v) {
      throw IndexError("cross_entropy_sum: target " + std::to_string(targets[r]) +
                       " outside vocabulary of " + std::to_string(v));
    }
    const T* row = xd.data() + r * v;
    T* p = probs.data() + r * v;
    T mx = *std::max_element(row, row + v);
    T z = T(0);
    for (std::size_t c = 0; c < v; ++c) z += (p[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < v; ++c) p[c] /= z;
    total -= row[targets[r]] - mx - std::log(z);
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return MakeResult<T>("cross_entropy_sum", Shape{}, {total}, {logits},
                       [n, v, probs = std::move(probs), tgt = std::move(tgt)](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    const T g = self.grad[0];
    for (std::size_t r = 0; r < n; ++r) {
      if (tgt[r] < 0) continue;
      for (std::size_t c = 0; c < v; ++c) gx[r * v + c] += g * probs[r * v + c];
      gx[r * v + tgt[r]] -= g;
    }
  });
}

template <typename T>
Tensor<T> segment_max(const Tensor<T>& x,
                      const std::vector<std::vector<std::size_t>>& segments) {
  if (x.rank() != 2) throw DimensionError("segment_max expects a matrix");
  const std::size_t d = x.cols(), rows = x.rows();
  const std::size_t s_count = segments.size();
  std::vector<T> out(s_count * d);
  std::vector<std::size_t> argmax(s_count * d);
  auto xd = x.data();
  for (std::size_t s = 0; s < s_count; ++s) {
    const auto& seg = segments[s];
    if (seg.empty()) throw PreconditionError("max pooling over an empty axis");
    for (std::size_t c = 0; c < d; ++c) {
      out[s * d + c] = -std::numeric_limits<T>::infinity();
    }
    for (std::size_t r : seg) {
      if (r >= rows) throw IndexError("segment_max: row index out of range");
      const T* row = xd.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) {
        if (row[c] > out[s * d + c]) {
          out[s * d + c] = row[c];
          argmax[s * d + c] = r;
        }
      }
    }
  }
  return MakeResult<T>("segment_max", Shape{s_count, d}, std::move(out), {x},
                       [d, argmax = std::move(argmax)](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
      gx[argmax[i] * d + i % d] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> segment_mean(const Tensor<T>& x,
                       const std::vector<std::vector<std::size_t>>& segments) {
  if (x.rank() != 2) throw DimensionError("segment_mean expects a matrix");
  const std::size_t d = x.cols();
  std::vector<T> out(segments.size() * d, T(0));
  auto xd = x.data();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].empty()) throw PreconditionError("mean pooling over an empty axis");
    const T inv = T(1) / static_cast<T>(segments[s].size());
    for (std::size_t r : segments[s]) {
      for (std::size_t c = 0; c < d; ++c) out[s * d + c] += xd[r * d + c] * inv;
    }
  }
  return MakeResult<T>("segment_mean", Shape{segments.size(), d}, std::move(out), {x},
                       [d, segments](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const T inv = T(1) / static_cast<T>(segments[s].size());
      for (std::size_t r : segments[s]) {
        for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += self.grad[s * d + c] * inv;
      }
    }
  });
}

template <typename T>
Tensor<T> segment_last(const Tensor<T>& x,
                       const std::vector<std::vector<std::size_t>>& segments) {
  std::vector<std::int64_t> index;
  index.reserve(segments.size());
  for (const auto& seg : segments) {
    if (seg.empty()) throw PreconditionError("last-state pooling over an empty axis");
    index.push_back(static_cast<std::int64_t>(seg.back()));
  }
  return gather_rows(x, index);
}

template <typename T>
Tensor<T> max_pool_axis(const Tensor<T>& x, std::size_t axis) {
  if (x.rank() != 2) throw DimensionError("max_pool_axis expects a matrix");
  if (axis > 1) throw DimensionError("max_pool_axis: axis must be 0 or 1");
  const std::size_t n = x.rows(), d = x.cols();
  if (axis == 0) {
    if (n == 0) throw PreconditionError("max pooling over an empty axis");
    std::vector<std::vector<std::size_t>> seg(1);
    for (std::size_t r = 0; r < n; ++r) seg[0].push_back(r);
    return reshape(segment_max(x, seg), Shape{d});
  }
  if (d == 0) throw PreconditionError("max pooling over an empty axis");
  std::vector<T> out(n);
  std::vector<std::size_t> argmax(n);
  auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xd.data() + r * d;
    argmax[r] = static_cast<std::size_t>(std::max_element(row, row + d) - row);
    out[r] = row[argmax[r]];
  }
  return MakeResult<T>("max_pool_axis", Shape{n}, std::move(out), {x},
                       [d, argmax = std::move(argmax)](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t r = 0; r < argmax.size(); ++r) gx[r * d + argmax[r]] += self.grad[r];
  });
}

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || a.rank() == 0 || a.rank() > 2 ||
      (a.rank() == 2 && a.rows() != b.rows())) {
    throw DimensionError("concat: leading shapes differ for " +
                         ShapeToString(a.shape()) + " and " +
                         ShapeToString(b.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.rows() : 1;
  const std::size_t p = a.cols(), q = b.cols();
  std::vector<T> out(rows * (p + q));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * p, p, out.data() + r * (p + q));
    std::copy_n(bd.data() + r * q, q, out.data() + r * (p + q) + p);
  }
  Shape shape = a.rank() == 2 ? Shape{rows, p + q} : Shape{p + q};
  return MakeResult<T>("concat", std::move(shape), std::move(out), {a, b},
                       [rows, p, q](Node<T>& self) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = self.grad.data() + r * (p + q);
      if (NeedsGrad(self, 0)) {
        auto& ga = InputGrad(self, 0);
        for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += g[c];
      }
      if (NeedsGrad(self, 1)) {
        auto& gb = InputGrad(self, 1);
        for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += g[p + c];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw PreconditionError("concat_rows: nothing to concatenate");
  const std::size_t d = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != d) {
      throw DimensionError("concat_rows: column counts differ (" +
                           ShapeToString(p.shape()) + ")");
    }
    rows += p.rows();
  }
  std::vector<T> out;
  out.reserve(rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return MakeResult<T>("concat_rows", Shape{rows, d}, std::move(out), parts,
                       [](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      const std::size_t len = self.inputs[k]->value.size();
      if (NeedsGrad(self, k)) {
        auto& g = InputGrad(self, k);
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw PreconditionError("concat_cols: nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ (" +
                           ShapeToString(p.shape()) + ")");
    }
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<T> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pd = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pd.data() + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
  }
  return MakeResult<T>("concat_cols", Shape{rows, total}, std::move(out), parts,
                       [rows, total, widths = std::move(widths)](Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (NeedsGrad(self, k)) {
        auto& g = InputGrad(self, k);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) {
            g[r * widths[k] + c] += self.grad[r * total + offset + c];
          }
        }
      }
      offset += widths[k];
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + ShapeToString(x.shape()));
  }
  const std::size_t rows = x.rows(), d = x.cols(), w = end - begin;
  std::vector<T> out(rows * w);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xd.data() + r * d + begin, w, out.data() + r * w);
  }
  return MakeResult<T>("slice_cols", Shape{rows, w}, std::move(out), {x},
                       [rows, d, w, begin](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * d + begin + c] += self.grad[r * w + c];
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin > end || end > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") of " + ShapeToString(x.shape()));
  }
  const std::size_t d = x.cols();
  std::vector<T> out(x.data().begin() + begin * d, x.data().begin() + end * d);
  return MakeResult<T>("slice_rows", Shape{end - begin, d}, std::move(out), {x},
                       [begin, d](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * d + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> index) {
  if (x.rank() != 2) throw DimensionError("gather_rows expects a matrix");
  const std::size_t d = x.cols();
  const auto rows = static_cast<std::int64_t>(x.rows());
  std::vector<T> out(index.size() * d, T(0));
  auto xd = x.data();
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) {
      throw IndexError("gather_rows: row " + std::to_string(index[r]) +
                       " of a " + std::to_string(rows) + "-row matrix");
    }
    if (index[r] >= 0) std::copy_n(xd.data() + index[r] * d, d, out.data() + r * d);
  }
  std::vector<std::int64_t> idx(index.begin(), index.end());
  return MakeResult<T>("gather_rows", Shape{index.size(), d}, std::move(out), {x},
                       [d, idx = std::move(idx)](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      T* g = gx.data() + idx[r] * d;
      const T* dy = self.grad.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) g[c] += dy[c];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (NumElements(shape) != x.numel()) {
    throw DimensionError("reshape " + ShapeToString(x.shape()) + " -> " +
                         ShapeToString(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return MakeResult<T>("reshape", std::move(shape), std::move(out), {x},
                       [](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T rate, Rng* rng) {
  if (rate < T(0) || rate >= T(1)) throw PreconditionError("dropout rate outside [0, 1)");
  if (rate == T(0) || rng == nullptr) return x;
  const T keep_scale = T(1) / (T(1) - rate);
  std::vector<T> mask(x.numel());
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng->uniform() < static_cast<double>(rate) ? T(0) : keep_scale;
    out[i] = xd[i] * mask[i];
  }
  return MakeResult<T>("dropout", x.shape(), std::move(out), {x},
                       [mask = std::move(mask)](Node<T>& self) {
    auto& gx = InputGrad(self, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps) {
  Shape ms = MatShape(x);
  const std::size_t n = ms[0], d = ms[1];
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias width differs from " +
                         ShapeToString(x.shape()));
  }
  std::vector<T> out(n * d), xhat(n * d), inv_std(n);
  auto xd = x.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = xd.data() + r * d;
    T mean = T(0);
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * g[c] + b[c];
    }
  }
  return MakeResult<T>("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                       [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
    const auto& gv = self.inputs[1]->value;
    const bool want_x = NeedsGrad(self, 0);
    for (std::size_t r = 0; r < n; ++r) {
      const T* dy = self.grad.data() + r * d;
      const T* xh = xhat.data() + r * d;
      if (NeedsGrad(self, 1)) {
        auto& gg = InputGrad(self, 1);
        for (std::size_t c = 0; c < d; ++c) gg[c] += dy[c] * xh[c];
      }
      if (NeedsGrad(self, 2)) {
        auto& gb = InputGrad(self, 2);
        for (std::size_t c = 0; c < d; ++c) gb[c] += dy[c];
      }
      if (want_x) {
        auto& gx = InputGrad(self, 0);
        T mean_dxh = T(0), mean_dxh_xh = T(0);
        for (std::size_t c = 0; c < d; ++c) {
          const T dxh = dy[c] * gv[c];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[c];
        }
        mean_dxh /= static_cast<T>(d);
        mean_dxh_xh /= static_cast<T>(d);
        for (std::size_t c = 0; c < d; ++c) {
          const T dxh = dy[c] * gv[c];
          gx[r * d + c] += inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
        }
      }
    }
  });
}

#define TWOWAY_INSTANTIATE_OPS(T)                                                  \
  template Tensor<T> elementwise(Elementwise, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                    \
  template Tensor<T> tanh(const Tensor<T>&);                                       \
  template Tensor<T> exp(const Tensor<T>&);                                        \
  template Tensor<T> log(const Tensor<T>&);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                        \
  template Tensor<T> sum_squares(const Tensor<T>&);                                \
  template Tensor<T> softmax_rows(const Tensor<T>&);                               \
  template Tensor<T> log_softmax_rows(const Tensor<T>&);                           \
  template Tensor<T> cross_entropy_sum(const Tensor<T>&, std::span<const int>);    \
  template Tensor<T> max_pool_axis(const Tensor<T>&, std::size_t);                 \
  template Tensor<T> segment_max(const Tensor<T>&,                                 \
                                 const std::vector<std::vector<std::size_t>>&);    \
  template Tensor<T> segment_mean(const Tensor<T>&,                                \
                                  const std::vector<std::vector<std::size_t>>&);   \
  template Tensor<T> segment_last(const Tensor<T>&,                                \
                                  const std::vector<std::vector<std::size_t>>&);   \
  template Tensor<T> concat(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                   \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                   \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);       \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::int64_t>); \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                             \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng*);                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);

TWOWAY_INSTANTIATE_OPS(float)
TWOWAY_INSTANTIATE_OPS(double)

#undef TWOWAY_INSTANTIATE_OPS

}  // namespace twoway
