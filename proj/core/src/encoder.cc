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

#include "twoway/encoder.h"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "twoway/ops.h"

namespace twoway {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Strided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStrided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
Tensor<T> Uniform(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> Xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return Uniform<T>({fan_in, fan_out}, std::sqrt(6.0 / double(fan_in + fan_out)), rng);
}

template <typename T>
Tensor<T> Positions(const EncoderConfig& config) {
  auto table = SinusoidalPositions(config.max_positions, config.d_model);
  std::vector<T> values(table.data().begin(), table.data().end());
  return Tensor<T>(table.shape(), std::move(values));
}

template <typename T>
Tensor<T> Linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add(matmul(x, w), b);
}

}  // namespace

Tensor<double> SinusoidalPositions(std::size_t positions, std::size_t d_model) {
  Tensor<double> table({positions, d_model});
  auto data = table.mutable_data();
  for (std::size_t p = 0; p < positions; ++p) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double rate = std::pow(10000.0, -double(i - i % 2) / double(d_model));
      data[p * d_model + i] = i % 2 == 0 ? std::sin(p * rate) : std::cos(p * rate);
    }
  }
  return table;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::Init(const EncoderConfig& config, Rng& rng) {
  EncoderParams p;
  p.config = config;
  const std::size_t d = config.d_model, f = config.d_ff;
  p.embedding = Tensor<T>({config.vocab, d});
  for (auto& v : p.embedding.mutable_data()) v = static_cast<T>(rng.normal());
  for (std::size_t l = 0; l < config.layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.ln1_gain = Tensor<T>({d}, T(1));
    layer.ln1_bias = Tensor<T>({d});
    layer.wq = Xavier<T>(d, d, rng);
    layer.bq = Tensor<T>({d});
    layer.wk = Xavier<T>(d, d, rng);
    layer.bk = Tensor<T>({d});
    layer.wv = Xavier<T>(d, d, rng);
    layer.bv = Tensor<T>({d});
    layer.wo = Xavier<T>(d, d, rng);
    layer.bo = Tensor<T>({d});
    layer.ln2_gain = Tensor<T>({d}, T(1));
    layer.ln2_bias = Tensor<T>({d});
    layer.w1 = Xavier<T>(d, f, rng);
    layer.b1 = Tensor<T>({f});
    layer.w2 = Xavier<T>(f, d, rng);
    layer.b2 = Tensor<T>({d});
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = Tensor<T>({d}, T(1));
  p.final_bias = Tensor<T>({d});
  p.positional = Positions<T>(config);
  return p;
}

template <typename T>
EncoderParams<T> EncoderParams<T>::Zeros(const EncoderConfig& config) {
  Rng rng(0);
  EncoderParams p = Init(config, rng);
  p.Visit([](const std::string& name, Tensor<T>& t) {
    const bool gain = name.find("gain") != std::string::npos;
    for (auto& v : t.mutable_data()) v = gain ? T(1) : T(0);
  });
  return p;
}

template <typename T>
void EncoderParams<T>::Visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  fn("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "ln1_gain", L.ln1_gain);
    fn(pre + "ln1_bias", L.ln1_bias);
    fn(pre + "wq", L.wq);
    fn(pre + "bq", L.bq);
    fn(pre + "wk", L.wk);
    fn(pre + "bk", L.bk);
    fn(pre + "wv", L.wv);
    fn(pre + "bv", L.bv);
    fn(pre + "wo", L.wo);
    fn(pre + "bo", L.bo);
    fn(pre + "ln2_gain", L.ln2_gain);
    fn(pre + "ln2_bias", L.ln2_bias);
    fn(pre + "w1", L.w1);
    fn(pre + "b1", L.b1);
    fn(pre + "w2", L.w2);
    fn(pre + "b2", L.b2);
  }
  fn("final_gain", final_gain);
  fn("final_bias", final_bias);
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, std::size_t batch, T dropout, Rng* rng,
                           std::vector<T>* weights) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("causal_attention: q/k/v shapes differ");
  }
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("causal_attention: width " + std::to_string(d) +
                         " does not split into " + std::to_string(heads) + " heads");
  }
  if (batch == 0 || q.rows() % batch != 0) {
    throw DimensionError("causal_attention: rows not divisible by batch");
  }
  const std::size_t steps = q.rows() / batch, dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const bool drop = dropout > T(0) && rng != nullptr;
  const T keep_scale = drop ? T(1) / (T(1) - dropout) : T(1);

  // probs holds softmax weights, kept holds weights after the dropout mask.
  std::vector<T> probs(batch * heads * steps * steps, T(0));
  std::vector<T> kept;
  if (drop) kept.resize(probs.size());
  std::vector<T> out(q.numel(), T(0));

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t base = b * steps * d + h * dh;
      ConstStrided<T> Q(q.data().data() + base, steps, dh, Eigen::OuterStride<>(d));
      ConstStrided<T> K(k.data().data() + base, steps, dh, Eigen::OuterStride<>(d));
      ConstStrided<T> V(v.data().data() + base, steps, dh, Eigen::OuterStride<>(d));
      Strided<T> O(out.data() + base, steps, dh, Eigen::OuterStride<>(d));
      RowMat<T> S = (Q * K.transpose()) * scale;
      T* P = probs.data() + (b * heads + h) * steps * steps;
      for (std::size_t t = 0; t < steps; ++t) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t u = 0; u <= t; ++u) mx = std::max(mx, S(t, u));
        T total = T(0);
        for (std::size_t u = 0; u <= t; ++u) total += (P[t * steps + u] = std::exp(S(t, u) - mx));
        for (std::size_t u = 0; u <= t; ++u) P[t * steps + u] /= total;
      }
      Eigen::Map<RowMat<T>> Pm(P, steps, steps);
      if (drop) {
        T* Kp = kept.data() + (b * heads + h) * steps * steps;
        for (std::size_t i = 0; i < steps * steps; ++i) {
          Kp[i] = rng->uniform() < static_cast<double>(dropout) ? T(0) : P[i] * keep_scale;
        }
        O.noalias() = Eigen::Map<RowMat<T>>(Kp, steps, steps) * V;
      } else {
        O.noalias() = Pm * V;
      }
    }
  }
  if (weights) *weights = probs;

  return detail::MakeResult<T>(
      "causal_attention", q.shape(), std::move(out), {q, k, v},
      [=, probs = std::move(probs), kept = std::move(kept)](Node<T>& self) {
        const bool gq = self.inputs[0]->requires_grad;
        const bool gk = self.inputs[1]->requires_grad;
        const bool gv = self.inputs[2]->requires_grad;
        T* dq_all = gq ? self.inputs[0]->GradBuffer().data() : nullptr;
        T* dk_all = gk ? self.inputs[1]->GradBuffer().data() : nullptr;
        T* dv_all = gv ? self.inputs[2]->GradBuffer().data() : nullptr;
        const T* qv = self.inputs[0]->value.data();
        const T* kv = self.inputs[1]->value.data();
        const T* vv = self.inputs[2]->value.data();
        RowMat<T> dP(steps, steps), dS(steps, steps);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t base = b * steps * d + h * dh;
            const Eigen::OuterStride<> st(d);
            ConstStrided<T> dO(self.grad.data() + base, steps, dh, st);
            ConstStrided<T> Q(qv + base, steps, dh, st);
            ConstStrided<T> K(kv + base, steps, dh, st);
            ConstStrided<T> V(vv + base, steps, dh, st);
            const std::size_t off = (b * heads + h) * steps * steps;
            Eigen::Map<const RowMat<T>> P(probs.data() + off, steps, steps);
            Eigen::Map<const RowMat<T>> Pk(drop ? kept.data() + off : probs.data() + off,
                                           steps, steps);
            if (gv) {
              Strided<T> dV(dv_all + base, steps, dh, st);
              dV.noalias() += Pk.transpose() * dO;
            }
            if (!gq && !gk) continue;
            dP.noalias() = dO * V.transpose();
            if (drop) {
              for (std::size_t i = 0; i < steps * steps; ++i) {
                dP.data()[i] *= Pk.data()[i] == T(0) ? T(0) : keep_scale;
              }
            }
            dS.setZero();
            for (std::size_t t = 0; t < steps; ++t) {
              T dot = T(0);
              for (std::size_t u = 0; u <= t; ++u) dot += dP(t, u) * P(t, u);
              for (std::size_t u = 0; u <= t; ++u) dS(t, u) = P(t, u) * (dP(t, u) - dot) * scale;
            }
            if (gq) {
              Strided<T> dQ(dq_all + base, steps, dh, st);
              dQ.noalias() += dS * K;
            }
            if (gk) {
              Strided<T> dK(dk_all + base, steps, dh, st);
              dK.noalias() += dS.transpose() * Q;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> EncodeBatch(const EncoderParams<T>& params, std::span<const int> tokens,
                      std::size_t batch, std::size_t steps, T dropout, Rng* rng) {
  const auto& cfg = params.config;
  if (tokens.size() != batch * steps) {
    throw DimensionError("EncodeBatch: token count does not match batch x steps");
  }
  if (steps == 0) throw PreconditionError("EncodeBatch: empty sequences");
  if (steps > cfg.max_positions) {
    throw PreconditionError("EncodeBatch: sequence longer than the positional table");
  }
  std::vector<std::int64_t> ids(tokens.size()), pos(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab) {
      throw IndexError("token id " + std::to_string(tokens[i]) +
                       " outside vocabulary of " + std::to_string(cfg.vocab));
    }
    ids[i] = tokens[i];
    pos[i] = static_cast<std::int64_t>(i % steps);
  }
  Tensor<T> x = add(gather_rows(params.embedding, ids), gather_rows(params.positional, pos));
  for (const auto& L : params.layers) {
    Tensor<T> n1 = layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor<T> att = causal_attention(Linear(n1, L.wq, L.bq), Linear(n1, L.wk, L.bk),
                                     Linear(n1, L.wv, L.bv), cfg.heads, batch, dropout, rng);
    x = add(x, Linear(att, L.wo, L.bo));
    Tensor<T> n2 = layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor<T> ff = Linear(relu(Linear(n2, L.w1, L.b1)), L.w2, L.b2);
    x = add(x, dropout > T(0) ? twoway::dropout(ff, dropout, rng) : ff);
  }
  return layer_norm(x, params.final_gain, params.final_bias);
}

template <typename T>
EncodedSequence<T> encode(const EncoderParams<T>& params, std::span<const int> tokens,
                          T dropout, Rng* rng) {
  if (tokens.empty()) throw PreconditionError("encode: empty token sequence");
  EncodedSequence<T> seq;
  seq.states = EncodeBatch(params, tokens, 1, tokens.size(), dropout, rng);
  seq.mask.assign(tokens.size(), true);
  return seq;
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template Tensor<float> causal_attention(const Tensor<float>&, const Tensor<float>&,
                                        const Tensor<float>&, std::size_t, std::size_t,
                                        float, Rng*, std::vector<float>*);
template Tensor<double> causal_attention(const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, std::size_t, std::size_t,
                                         double, Rng*, std::vector<double>*);
template Tensor<float> EncodeBatch(const EncoderParams<float>&, std::span<const int>,
                                   std::size_t, std::size_t, float, Rng*);
template Tensor<double> EncodeBatch(const EncoderParams<double>&, std::span<const int>,
                                    std::size_t, std::size_t, double, Rng*);
template EncodedSequence<float> encode(const EncoderParams<float>&, std::span<const int>,
                                       float, Rng*);
template EncodedSequence<double> encode(const EncoderParams<double>&, std::span<const int>,
                                        double, Rng*);

}  // namespace twoway
