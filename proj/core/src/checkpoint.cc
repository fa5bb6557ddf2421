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

#include "twoway/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

#include "twoway/text.h"

namespace twoway {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'G', '2', 'S', '1'};

template <typename N>
void Put(std::ofstream& out, N value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(N));
}

template <typename N>
N Get(std::ifstream& in, const std::string& path) {
  N value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(N))) {
    throw DataError("truncated checkpoint '" + path + "'");
  }
  return value;
}

std::string GetString(std::ifstream& in, std::size_t size, const std::string& path) {
  std::string s(size, '\0');
  if (size && !in.read(s.data(), static_cast<std::streamsize>(size))) {
    throw DataError("truncated checkpoint '" + path + "'");
  }
  return s;
}

}  // namespace

const NamedArray& CheckpointData::Find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw DataError("checkpoint has no array '" + name + "'");
}

void WriteCheckpoint(const std::string& path, const CheckpointData& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  Put<std::uint32_t>(out, kCheckpointVersion);
  Put<std::uint64_t>(out, data.digest);
  Put<std::uint64_t>(out, data.src_vocab);
  Put<std::uint64_t>(out, data.tgt_vocab);
  Put<std::uint64_t>(out, data.config_text.size());
  out.write(data.config_text.data(), static_cast<std::streamsize>(data.config_text.size()));
  Put<std::uint64_t>(out, data.arrays.size());
  for (const auto& a : data.arrays) {
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(a.extents.size()));
    for (auto e : a.extents) Put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(float)));
  }
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

CheckpointData ReadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("'" + path + "' is not a checkpoint (bad magic)");
  }
  const auto version = Get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointData data;
  data.digest = Get<std::uint64_t>(in, path);
  data.src_vocab = Get<std::uint64_t>(in, path);
  data.tgt_vocab = Get<std::uint64_t>(in, path);
  data.config_text = GetString(in, Get<std::uint64_t>(in, path), path);
  const auto count = Get<std::uint64_t>(in, path);
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = GetString(in, Get<std::uint32_t>(in, path), path);
    const auto rank = Get<std::uint32_t>(in, path);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.extents.push_back(Get<std::uint64_t>(in, path));
      n *= a.extents.back();
    }
    a.values.resize(n);
    if (n && !in.read(reinterpret_cast<char*>(a.values.data()),
                      static_cast<std::streamsize>(n * sizeof(float)))) {
      throw DataError("truncated checkpoint '" + path + "'");
    }
    data.arrays.push_back(std::move(a));
  }
  return data;
}

void PushBits(std::vector<float>& out, std::uint64_t bits) {
  out.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits)));
  out.push_back(std::bit_cast<float>(static_cast<std::uint32_t>(bits >> 32)));
}

void PushDouble(std::vector<float>& out, double value) {
  PushBits(out, std::bit_cast<std::uint64_t>(value));
}

std::uint64_t PopBits(const std::vector<float>& in, std::size_t& at) {
  if (at + 2 > in.size()) throw DataError("checkpoint state array too short");
  const std::uint64_t lo = std::bit_cast<std::uint32_t>(in[at]);
  const std::uint64_t hi = std::bit_cast<std::uint32_t>(in[at + 1]);
  at += 2;
  return lo | (hi << 32);
}

double PopDouble(const std::vector<float>& in, std::size_t& at) {
  return std::bit_cast<double>(PopBits(in, at));
}

}  // namespace twoway
