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

namespace twoway {

// Checkpoint whose recorded digest does not match its configuration or the
// requested model shapes.
class DigestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  std::vector<std::size_t> extents;
  std::vector<float> values;
};

struct CheckpointData {
  std::uint64_t digest = 0;
  std::uint64_t src_vocab = 0, tgt_vocab = 0;
  std::string config_text;
  std::vector<NamedArray> arrays;

  const NamedArray& Find(const std::string& name) const;
};

// Layout: "G2S1", u32 version, u64 digest, u64 vocab sizes, u64 config
// length and text, u64 array count, then each array as u32 name length,
// name, u32 rank, u64 extents and little-endian float32 values.
void WriteCheckpoint(const std::string& path, const CheckpointData& data);
// Throws DataError for unreadable or malformed files.
CheckpointData ReadCheckpoint(const std::string& path);

// Scalars stored bit-exactly inside float32 arrays.
void PushBits(std::vector<float>& out, std::uint64_t bits);
void PushDouble(std::vector<float>& out, double value);
std::uint64_t PopBits(const std::vector<float>& in, std::size_t& at);
double PopDouble(const std::vector<float>& in, std::size_t& at);

}  // namespace twoway
