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

#include "twoway/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "twoway/ops.h"

namespace twoway {

namespace {

constexpr std::uint64_t kDropoutStream = 1ULL << 32;
constexpr std::uint64_t kShuffleStream = 2ULL << 32;

template <typename T>
bool AllFinite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace

template <typename T>
void OptimizerState<T>::Reset(const std::vector<Tensor<T>*>& params, double learning_rate) {
  step = 0;
  lr = learning_rate;
  m.clear();
  v.clear();
  for (const auto* p : params) {
    m.emplace_back(p->numel(), T(0));
    v.emplace_back(p->numel(), T(0));
  }
}

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, OptimizerState<T>& state,
               const AdamConfig& hyper) {
  if (state.m.size() != params.size()) {
    throw PreconditionError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k]->numel()) {
      throw DimensionError("adam_step: moment size mismatch for parameter " + std::to_string(k));
    }
    if (params[k]->has_grad() && !AllFinite(params[k]->grad())) {
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(k));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  const T correct1 = static_cast<T>(1.0 - std::pow(hyper.beta1, t));
  const T correct2 = static_cast<T>(1.0 - std::pow(hyper.beta2, t));
  const T lr = static_cast<T>(state.lr), eps = static_cast<T>(hyper.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k];
    auto value = p.mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    const bool has = p.has_grad();
    auto grad = p.grad();
    for (std::size_t e = 0; e < value.size(); ++e) {
      const T g = has ? grad[e] : T(0);
      m[e] = b1 * m[e] + (T(1) - b1) * g;
      v[e] = b2 * v[e] + (T(1) - b2) * g * g;
      const T m_hat = m[e] / correct1;
      const T v_hat = v[e] / correct2;
      value[e] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
Tensor<T> l2_penalty(const TwoDLSTMParams<T>& grid, double coeff) {
  Tensor<T> total = add(add(sum_squares(grid.w), sum_squares(grid.u)), sum_squares(grid.v));
  return scale(total, static_cast<T>(coeff));
}

template <typename T>
Tensor<T> apply_regularization(const Tensor<T>& loss, const TwoDLSTMParams<T>& grid,
                               double l2_coeff) {
  if (l2_coeff < 0) throw PreconditionError("l2 coefficient must be non-negative");
  if (l2_coeff == 0) return loss;
  return add(loss, l2_penalty(grid, l2_coeff));
}

template <typename T>
double clip_global_norm(const std::vector<Tensor<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    if (!p->has_grad()) continue;
    for (T g : p->grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto* p : params) {
      if (!p->has_grad()) continue;
      for (auto& g : p->mutable_grad()) g *= factor;
    }
  }
  return norm;
}

bool maybe_decay(ScheduleState& schedule, double ppl_sum, double& lr) {
  if (!std::isfinite(ppl_sum)) throw DomainError("maybe_decay: perplexity is not finite");
  if (ppl_sum < schedule.best) {
    schedule.best = ppl_sum;
    schedule.bad = 0;
    return false;
  }
  if (++schedule.bad < schedule.patience) return false;
  lr *= schedule.factor;
  schedule.bad = 0;
  ++schedule.decay_events;
  return true;
}

std::vector<std::vector<std::size_t>> MakeBuckets(const std::vector<Example>& examples,
                                                  std::size_t batch_tokens) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  auto extent = [&examples](std::size_t k) {
    return std::max(examples[k].src.size(), examples[k].tgt.size());
  };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return extent(a) < extent(b); });
  std::vector<std::vector<std::size_t>> buckets;
  std::vector<std::size_t> current;
  std::size_t max_src = 0, max_tgt = 0;
  for (std::size_t k : order) {
    const std::size_t src = std::max(max_src, examples[k].src.size() + 1);
    const std::size_t tgt = std::max(max_tgt, examples[k].tgt.size() + 1);
    if (!current.empty() && (current.size() + 1) * (src + tgt) > batch_tokens) {
      buckets.push_back(std::move(current));
      current.clear();
      max_src = max_tgt = 0;
    }
    current.push_back(k);
    max_src = std::max(max_src, examples[k].src.size() + 1);
    max_tgt = std::max(max_tgt, examples[k].tgt.size() + 1);
  }
  if (!current.empty()) buckets.push_back(std::move(current));
  return buckets;
}

BidirBatch GatherBatch(const std::vector<Example>& examples,
                       const std::vector<std::size_t>& indices) {
  std::vector<std::vector<int>> src, tgt;
  for (std::size_t k : indices) {
    src.push_back(examples[k].src);
    tgt.push_back(examples[k].tgt);
  }
  return MakeBatch(src, tgt);
}

template <typename T>
Perplexity evaluate_perplexity(const BidirModelParams<T>& params,
                               const std::vector<Example>& dev, std::size_t batch_tokens) {
  if (dev.empty()) throw PreconditionError("evaluate_perplexity: empty dev set");
  NoGradGuard no_grad;
  double fwd = 0.0, bwd = 0.0;
  std::size_t n_fwd = 0, n_bwd = 0;
  for (const auto& bucket : MakeBuckets(dev, batch_tokens)) {
    auto loss = joint_loss(params, GatherBatch(dev, bucket));
    fwd += loss.fwd_nll.item();
    bwd += loss.bwd_nll.item();
    n_fwd += loss.tgt_tokens;
    n_bwd += loss.src_tokens;
  }
  return {std::exp(fwd / double(n_fwd)), std::exp(bwd / double(n_bwd))};
}

std::string LogCsvHeader() { return "step,lr,train_loss,ppl_fwd,ppl_bwd,decay_events"; }

std::string ToCsv(const LogRow& row) {
  std::ostringstream out;
  out.precision(9);
  out << row.step << ',' << row.lr << ',' << row.train_loss << ',' << row.ppl.fwd << ','
      << row.ppl.bwd << ',' << row.decay_events;
  return out.str();
}

Trainer::Trainer(RunConfig config, ModelConfig model, std::vector<Example> train,
                 std::vector<Example> dev)
    : config_(std::move(config)),
      model_(model),
      train_(std::move(train)),
      dev_(std::move(dev)) {
  if (train_.empty()) throw PreconditionError("Trainer: empty training set");
  buckets_ = MakeBuckets(train_, config_.batch_tokens);
  Rng rng(config_.seed);
  params_ = BidirModelParams<float>::Init(model_, rng);
  named_ = params_.Named();
  for (auto& [name, t] : named_) {
    t->set_requires_grad(true);
    tensors_.push_back(t);
  }
  optimizer_.Reset(tensors_, config_.lr);
  schedule_.factor = config_.decay;
  schedule_.patience = config_.patience;
}

const std::vector<std::size_t>& Trainer::BatchFor(std::uint64_t step) {
  const std::uint64_t epoch = step / buckets_.size();
  if (epoch != epoch_) {
    epoch_order_.resize(buckets_.size());
    std::iota(epoch_order_.begin(), epoch_order_.end(), 0);
    Rng rng = Rng::Derive(config_.seed, kShuffleStream + epoch);
    rng.shuffle(epoch_order_.begin(), epoch_order_.end());
    epoch_ = epoch;
  }
  return buckets_[epoch_order_[step % buckets_.size()]];
}

double Trainer::Step() {
  BidirBatch batch = GatherBatch(train_, BatchFor(optimizer_.step));
  Rng rng = Rng::Derive(config_.seed, kDropoutStream + optimizer_.step);
  LossOptions options;
  options.dropout = config_.dropout;
  options.rng = &rng;
  options.direction_weight = config_.direction_weight;
  auto loss = joint_loss(params_, batch, options);
  Tensor<float> total =
      scale(loss.total, 1.0f / static_cast<float>(loss.tgt_tokens + loss.src_tokens));
  total = apply_regularization(total, params_.grid, config_.l2_2dlstm);
  const double value = total.item();
  if (!std::isfinite(value)) {
    throw NumericError("training loss is not finite at step " +
                       std::to_string(optimizer_.step + 1));
  }
  for (auto* t : tensors_) t->zero_grad();
  backward(total);
  clip_global_norm(tensors_, config_.clip);
  adam_step(tensors_, optimizer_);
  loss_sum_ += value;
  ++loss_count_;
  return value;
}

LogRow Trainer::Checkpoint(std::ostream* log) {
  LogRow row;
  row.step = optimizer_.step;
  row.train_loss = loss_count_ ? loss_sum_ / double(loss_count_) : 0.0;
  if (!dev_.empty()) {
    row.ppl = evaluate_perplexity(params_, dev_, config_.batch_tokens);
    maybe_decay(schedule_, row.ppl.sum(), optimizer_.lr);
  }
  row.lr = optimizer_.lr;
  row.decay_events = schedule_.decay_events;
  loss_sum_ = 0.0;
  loss_count_ = 0;
  if (log) {
    *log << ToCsv(row) << '\n';
    log->flush();
  }
  return row;
}

void Trainer::Run(std::ostream* log, const std::string& save_path) {
  while (optimizer_.step < config_.steps) {
    Step();
    if (optimizer_.step % config_.checkpoint_every == 0 || optimizer_.step == config_.steps) {
      Checkpoint(log);
      if (!save_path.empty()) Save(save_path);
    }
  }
}

CheckpointData Trainer::Save() const {
  CheckpointData data;
  data.digest = ShapeDigest(model_);
  data.src_vocab = model_.src_vocab;
  data.tgt_vocab = model_.tgt_vocab;
  data.config_text = config_.ToText();
  for (std::size_t k = 0; k < named_.size(); ++k) {
    const auto& [name, t] = named_[k];
    const auto& shape = t->shape();
    data.arrays.push_back({"param/" + name, shape, {t->data().begin(), t->data().end()}});
    data.arrays.push_back({"adam_m/" + name, shape, optimizer_.m[k]});
    data.arrays.push_back({"adam_v/" + name, shape, optimizer_.v[k]});
  }
  NamedArray state{"state", {}, {}};
  PushBits(state.values, optimizer_.step);
  PushDouble(state.values, optimizer_.lr);
  PushDouble(state.values, schedule_.best);
  PushBits(state.values, schedule_.bad);
  PushDouble(state.values, schedule_.factor);
  PushBits(state.values, schedule_.patience);
  PushBits(state.values, schedule_.decay_events);
  PushDouble(state.values, loss_sum_);
  PushBits(state.values, loss_count_);
  state.extents = {state.values.size()};
  data.arrays.push_back(std::move(state));
  return data;
}

void Trainer::Save(const std::string& path) const { WriteCheckpoint(path, Save()); }

namespace {

void CheckDigest(const CheckpointData& data, const ModelConfig& model) {
  if (data.digest != ShapeDigest(model) || data.src_vocab != model.src_vocab ||
      data.tgt_vocab != model.tgt_vocab) {
    throw DigestError("checkpoint digest does not match the model configuration");
  }
}

void CopyArray(const NamedArray& a, const Shape& shape, std::span<float> out) {
  if (a.extents != shape || a.values.size() != out.size()) {
    throw DigestError("array '" + a.name + "' has shape " + ShapeToString(a.extents) +
                      ", expected " + ShapeToString(shape));
  }
  std::copy(a.values.begin(), a.values.end(), out.begin());
}

}  // namespace

void Trainer::Load(const CheckpointData& data) {
  CheckDigest(data, model_);
  for (std::size_t k = 0; k < named_.size(); ++k) {
    const auto& [name, t] = named_[k];
    CopyArray(data.Find("param/" + name), t->shape(), t->mutable_data());
    CopyArray(data.Find("adam_m/" + name), t->shape(), optimizer_.m[k]);
    CopyArray(data.Find("adam_v/" + name), t->shape(), optimizer_.v[k]);
    t->zero_grad();
  }
  const auto& state = data.Find("state").values;
  std::size_t at = 0;
  optimizer_.step = PopBits(state, at);
  optimizer_.lr = PopDouble(state, at);
  schedule_.best = PopDouble(state, at);
  schedule_.bad = PopBits(state, at);
  schedule_.factor = PopDouble(state, at);
  schedule_.patience = PopBits(state, at);
  schedule_.decay_events = PopBits(state, at);
  loss_sum_ = PopDouble(state, at);
  loss_count_ = PopBits(state, at);
}

void Trainer::Load(const std::string& path) { Load(ReadCheckpoint(path)); }

BidirModelParams<float> LoadParams(const CheckpointData& data, const ModelConfig& model) {
  CheckDigest(data, model);
  auto params = BidirModelParams<float>::Zeros(model);
  for (auto& [name, t] : params.Named()) {
    CopyArray(data.Find("param/" + name), t->shape(), t->mutable_data());
  }
  return params;
}

#define TWOWAY_INSTANTIATE_TRAINING(T)                                                      \
  template struct OptimizerState<T>;                                                        \
  template void adam_step(const std::vector<Tensor<T>*>&, OptimizerState<T>&,               \
                          const AdamConfig&);                                               \
  template Tensor<T> l2_penalty(const TwoDLSTMParams<T>&, double);                          \
  template Tensor<T> apply_regularization(const Tensor<T>&, const TwoDLSTMParams<T>&,       \
                                          double);                                          \
  template double clip_global_norm(const std::vector<Tensor<T>*>&, double);                 \
  template Perplexity evaluate_perplexity(const BidirModelParams<T>&,                       \
                                          const std::vector<Example>&, std::size_t);

TWOWAY_INSTANTIATE_TRAINING(float)
TWOWAY_INSTANTIATE_TRAINING(double)

#undef TWOWAY_INSTANTIATE_TRAINING

}  // namespace twoway
