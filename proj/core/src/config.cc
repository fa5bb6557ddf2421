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

#include "twoway/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace twoway {

namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

template <typename N>
N ParseNumber(const std::string& key, const std::string& value) {
  N out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("bad value for '" + key + "': '" + value + "'");
  }
  return out;
}

std::string Format(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename N>
Field Number(N RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& key, const std::string& value) {
            c.*member = ParseNumber<N>(key, value);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<N>) return Format(c.*member);
            else return std::to_string(c.*member);
          }};
}

Field Flag(bool RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& key, const std::string& value) {
            if (value == "true" || value == "1") c.*member = true;
            else if (value == "false" || value == "0") c.*member = false;
            else throw ConfigError("config key '" + key + "': expected true or false, got '" + value + "'");
          },
          [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field Text(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string&, const std::string& value) {
            c.*member = value;
          },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& Fields() {
  static const std::vector<std::pair<std::string, Field>> fields = {
      {"d_model", Number(&RunConfig::d_model)},
      {"d_cell", Number(&RunConfig::d_cell)},
      {"layers", Number(&RunConfig::layers)},
      {"heads", Number(&RunConfig::heads)},
      {"d_ff", Number(&RunConfig::d_ff)},
      {"max_positions", Number(&RunConfig::max_positions)},
      {"pooling", Text(&RunConfig::pooling)},
      {"tie_encoders", Flag(&RunConfig::tie_encoders)},
      {"src_vocab_size", Number(&RunConfig::src_vocab_size)},
      {"tgt_vocab_size", Number(&RunConfig::tgt_vocab_size)},
      {"lr", Number(&RunConfig::lr)},
      {"dropout", Number(&RunConfig::dropout)},
      {"l2_2dlstm", Number(&RunConfig::l2_2dlstm)},
      {"patience", Number(&RunConfig::patience)},
      {"decay", Number(&RunConfig::decay)},
      {"clip", Number(&RunConfig::clip)},
      {"batch_tokens", Number(&RunConfig::batch_tokens)},
      {"max_seq_len", Number(&RunConfig::max_seq_len)},
      {"steps", Number(&RunConfig::steps)},
      {"checkpoint_every", Number(&RunConfig::checkpoint_every)},
      {"direction_weight", Number(&RunConfig::direction_weight)},
      {"beam", Number(&RunConfig::beam)},
      {"alpha", Number(&RunConfig::alpha)},
      {"max_len_factor", Number(&RunConfig::max_len_factor)},
      {"max_len_offset", Number(&RunConfig::max_len_offset)},
      {"train_src", Text(&RunConfig::train_src)},
      {"train_tgt", Text(&RunConfig::train_tgt)},
      {"dev_src", Text(&RunConfig::dev_src)},
      {"dev_tgt", Text(&RunConfig::dev_tgt)},
      {"output_dir", Text(&RunConfig::output_dir)},
      {"seed", Number(&RunConfig::seed)},
      {"precision", Text(&RunConfig::precision)},
      {"workers", Number(&RunConfig::workers)},
  };
  return fields;
}

void Require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

void RunConfig::Set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : Fields()) {
    if (name == key) {
      field.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::Validate() const {
  Require(d_model > 0 && d_cell > 0 && heads > 0 && d_ff > 0, "model sizes must be positive");
  Require(d_model % heads == 0, "d_model must be divisible by heads");
  Require(max_positions > max_seq_len, "max_positions must exceed max_seq_len");
  Require(max_seq_len >= 1, "max_seq_len must be at least 1");
  Require(pooling == "max" || pooling == "mean" || pooling == "last",
          "pooling must be max, mean or last");
  Require(lr > 0, "lr must be positive");
  Require(dropout >= 0 && dropout < 1, "dropout must lie in [0, 1)");
  Require(l2_2dlstm >= 0, "l2_2dlstm must be non-negative");
  Require(patience >= 1, "patience must be at least 1");
  Require(decay > 0 && decay < 1, "decay must lie in (0, 1)");
  Require(clip >= 0, "clip must be non-negative");
  Require(batch_tokens >= 1, "batch_tokens must be positive");
  Require(checkpoint_every >= 1, "checkpoint_every must be positive");
  Require(direction_weight < 0 || direction_weight <= 1, "direction_weight must be at most 1");
  Require(beam >= 1, "beam must be at least 1");
  Require(alpha >= 0, "alpha must be non-negative");
  Require(precision == "float32" || precision == "float64",
          "precision must be float32 or float64");
  Require(workers >= 1, "workers must be at least 1");
}

std::string RunConfig::ToText() const {
  std::string out;
  for (const auto& [name, field] : Fields()) out += name + " = " + field.get(*this) + "\n";
  return out;
}

std::vector<std::string> RunConfig::Keys() {
  std::vector<std::string> keys;
  for (const auto& [name, field] : Fields()) keys.push_back(name);
  return keys;
}

ModelConfig RunConfig::Model(std::size_t src_vocab, std::size_t tgt_vocab) const {
  ModelConfig m;
  m.src_vocab = src_vocab;
  m.tgt_vocab = tgt_vocab;
  m.d_model = d_model;
  m.d_ff = d_ff;
  m.heads = heads;
  m.layers = layers;
  m.d_cell = d_cell;
  m.max_positions = max_positions;
  m.pooling = ParsePooling(pooling);
  m.tie_encoders = tie_encoders;
  return m;
}

RunConfig ParseConfig(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = Trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    config.Set(Trim(line.substr(0, eq)), Trim(line.substr(eq + 1)));
  }
  return config;
}

RunConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseConfig(buffer.str());
}

std::uint64_t ShapeDigest(const ModelConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int k = 0; k < 8; ++k) {
      h ^= (v >> (8 * k)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::uint64_t v : {config.src_vocab, config.tgt_vocab, config.d_model, config.d_ff,
                          config.heads, config.layers, config.d_cell, config.max_positions}) {
    mix(v);
  }
  mix(static_cast<std::uint64_t>(config.pooling));
  mix(config.tie_encoders ? 1 : 0);
  return h;
}

}  // namespace twoway
