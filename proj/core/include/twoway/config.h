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
#include <stdexcept>
#include <string>
#include <vector>

#include "twoway/model.h"

namespace twoway {

// Unknown keys, unparsable values and out-of-range settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // Model.
  std::size_t d_model = 64;
  std::size_t d_cell = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_positions = 256;
  std::string pooling = "max";
  bool tie_encoders = false;
  // 0 keeps every training token.
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;

  // Training.
  double lr = 0.0005;
  double dropout = 0.3;
  double l2_2dlstm = 0.05;
  std::size_t patience = 3;
  double decay = 0.9;
  double clip = 5.0;  // global gradient norm, 0 disables
  std::size_t batch_tokens = 2048;
  std::size_t max_seq_len = 50;
  std::size_t steps = 2000;
  std::size_t checkpoint_every = 500;
  double direction_weight = -1.0;  // negative: plain sum of both directions

  // Decoding.
  std::size_t beam = 12;
  double alpha = 0.6;
  std::size_t max_len_factor = 3;
  std::size_t max_len_offset = 5;

  // Data and run.
  std::string train_src, train_tgt, dev_src, dev_tgt;
  std::string output_dir = "run";
  std::uint64_t seed = 1;
  std::string precision = "float32";
  std::size_t workers = 1;

  // Applies one key=value setting; throws ConfigError.
  void Set(const std::string& key, const std::string& value);
  // Range checks; throws ConfigError.
  void Validate() const;
  // Every key in a fixed order, one `key = value` per line.
  std::string ToText() const;
  static std::vector<std::string> Keys();

  ModelConfig Model(std::size_t src_vocab, std::size_t tgt_vocab) const;
};

// Parses `#`-commented key = value text.
RunConfig ParseConfig(const std::string& text);
RunConfig LoadConfig(const std::string& path);

// FNV-1a over the settings that determine parameter shapes.
std::uint64_t ShapeDigest(const ModelConfig& config);

}  // namespace twoway
