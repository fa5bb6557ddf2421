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
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "twoway/checkpoint.h"
#include "twoway/config.h"
#include "twoway/model.h"
#include "twoway/tensor.h"

namespace twoway {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  std::uint64_t step = 0;
  double lr = 0.0;
  std::vector<std::vector<T>> m, v;

  void Reset(const std::vector<Tensor<T>*>& params, double learning_rate);
};

// Bias-corrected Adam on every tensor's accumulated gradient (absent
// gradients count as zero). Throws NumericError, leaving parameters and state
// untouched, when a gradient is not finite.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, OptimizerState<T>& state,
               const AdamConfig& hyper = {});

// coeff * sum of squares of the 2DLSTM weight matrices (W, U, V).
template <typename T>
Tensor<T> l2_penalty(const TwoDLSTMParams<T>& grid, double coeff);
template <typename T>
Tensor<T> apply_regularization(const Tensor<T>& loss, const TwoDLSTMParams<T>& grid,
                               double l2_coeff);

// Rescales gradients so their global norm is at most `max_norm` (0 disables).
// Returns the norm before clipping.
template <typename T>
double clip_global_norm(const std::vector<Tensor<T>*>& params, double max_norm);

struct ScheduleState {
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad = 0;  // consecutive non-improving checkpoints
  double factor = 0.9;
  std::size_t patience = 3;
  std::size_t decay_events = 0;
};

// Feeds one checkpoint's perplexity sum. A value equal to the best so far
// counts as non-improving. Returns true when the learning rate was decayed.
bool maybe_decay(ScheduleState& schedule, double ppl_sum, double& lr);

struct Example {
  std::vector<int> src, tgt;  // unframed ids
};

struct Perplexity {
  double fwd = 0.0;  // target given source
  double bwd = 0.0;  // source given target
  double sum() const { return fwd + bwd; }
};

// Groups examples of similar max(J, I) so that batch * (max J + max I) stays
// within `batch_tokens`; a single long example still forms a batch.
std::vector<std::vector<std::size_t>> MakeBuckets(const std::vector<Example>& examples,
                                                  std::size_t batch_tokens);
BidirBatch GatherBatch(const std::vector<Example>& examples,
                       const std::vector<std::size_t>& indices);

// Dropout off. Throws PreconditionError on an empty set.
template <typename T>
Perplexity evaluate_perplexity(const BidirModelParams<T>& params,
                               const std::vector<Example>& dev, std::size_t batch_tokens = 4096);

struct LogRow {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  Perplexity ppl;
  std::size_t decay_events = 0;
};
std::string LogCsvHeader();
std::string ToCsv(const LogRow& row);

// Owns parameters, optimizer and schedule for one run. Batch order and
// dropout masks are derived from (seed, step), so a run resumed from a
// checkpoint continues exactly as if uninterrupted.
class Trainer {
 public:
  Trainer(RunConfig config, ModelConfig model, std::vector<Example> train,
          std::vector<Example> dev);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  // One optimization step; returns the normalized training loss.
  double Step();
  // Dev perplexity, schedule update and (when `log` is given) a CSV line.
  LogRow Checkpoint(std::ostream* log = nullptr);
  // Steps until `config.steps`, checkpointing every `checkpoint_every` steps
  // and after the final one. `save_path`, when non-empty, is rewritten at
  // every checkpoint.
  void Run(std::ostream* log, const std::string& save_path);

  CheckpointData Save() const;
  void Save(const std::string& path) const;
  // Throws DigestError when the checkpoint belongs to a different model.
  void Load(const CheckpointData& data);
  void Load(const std::string& path);

  std::uint64_t step() const { return optimizer_.step; }
  double lr() const { return optimizer_.lr; }
  const RunConfig& config() const { return config_; }
  const ModelConfig& model_config() const { return model_; }
  BidirModelParams<float>& params() { return params_; }
  const OptimizerState<float>& optimizer() const { return optimizer_; }
  const ScheduleState& schedule() const { return schedule_; }
  std::size_t batches_per_epoch() const { return buckets_.size(); }

 private:
  const std::vector<std::size_t>& BatchFor(std::uint64_t step);

  RunConfig config_;
  ModelConfig model_;
  std::vector<Example> train_, dev_;
  std::vector<std::vector<std::size_t>> buckets_;
  std::vector<std::size_t> epoch_order_;
  std::uint64_t epoch_ = std::numeric_limits<std::uint64_t>::max();
  BidirModelParams<float> params_;
  std::vector<std::pair<std::string, Tensor<float>*>> named_;
  std::vector<Tensor<float>*> tensors_;
  OptimizerState<float> optimizer_;
  ScheduleState schedule_;
  double loss_sum_ = 0.0;
  std::uint64_t loss_count_ = 0;
};

// Parameters stored in a checkpoint, for decoding.
BidirModelParams<float> LoadParams(const CheckpointData& data, const ModelConfig& model);

}  // namespace twoway
