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
#include <unordered_map>
#include <utility>
#include <vector>

namespace twoway {

// Missing or malformed corpus, vocabulary or model files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Sentence = std::vector<std::string>;

Sentence SplitWhitespace(const std::string& line);
std::string JoinTokens(const Sentence& tokens);

// Ids 0..3 are always <pad>, <s>, </s>, <unk>.
class Vocabulary {
 public:
  Vocabulary();

  // Tokens ordered by descending count, ties lexicographic. `max_size` caps
  // the total size including reserved entries; 0 means unbounded.
  static Vocabulary Build(const std::vector<Sentence>& sentences, std::size_t max_size = 0);
  // One token per line; line k becomes id k + 4.
  static Vocabulary Load(const std::string& path);
  void Save(const std::string& path) const;

  int Add(const std::string& token);
  // Unknown tokens map to the UNK id.
  int Id(const std::string& token) const;
  bool Contains(const std::string& token) const { return index_.count(token) > 0; }
  const std::string& Token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::vector<int> Encode(const Sentence& tokens) const;
  // Drops pad, BOS and EOS.
  Sentence Decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline constexpr const char* kEndOfWord = "</w>";

struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;
  std::size_t merge_count() const { return merges.size(); }
};

// Most frequent adjacent pair first, frequency ties broken by the
// lexicographically smaller pair. Throws PreconditionError on an empty corpus.
BpeModel learn_bpe(const std::vector<std::string>& lines, std::size_t merges);
// Subwords of a whitespace-tokenized line; a word's last subword carries the
// end-of-word marker.
Sentence apply_bpe(const BpeModel& model, const std::string& line);
std::string undo_bpe(const Sentence& tokens);

void SaveBpe(const BpeModel& model, const std::string& path);
BpeModel LoadBpe(const std::string& path);

struct ParallelCorpus {
  std::vector<Sentence> src, tgt;
  std::size_t size() const { return src.size(); }
};

// Reads two line-aligned files, dropping pairs with an empty side. Throws
// DataError when a file is missing or the line counts differ.
ParallelCorpus LoadCorpus(const std::string& src_path, const std::string& tgt_path);
std::vector<Sentence> LoadSentences(const std::string& path);
void SaveSentences(const std::vector<Sentence>& sentences, const std::string& path);

enum class SyntheticTask { kCopy, kReverse, kShiftCipher, kSort };
const char* SyntheticTaskName(SyntheticTask task);
SyntheticTask ParseSyntheticTask(const std::string& name);

struct SyntheticSpec {
  SyntheticTask task = SyntheticTask::kCopy;
  std::size_t count = 1000;
  std::size_t min_len = 3, max_len = 10;
  std::size_t vocab = 20;
  std::size_t shift = 1;
  std::uint64_t seed = 1;
};

// Symbol k of the synthetic alphabet: a..z, then w26, w27, ...
std::string SyntheticSymbol(std::size_t k);
Sentence apply_synthetic(const SyntheticSpec& spec, const Sentence& source);
// Inverse of a bijective task; throws DomainError for sort.
Sentence invert_synthetic(const SyntheticSpec& spec, const Sentence& target);
ParallelCorpus gen_synthetic(const SyntheticSpec& spec);

struct BleuStats {
  std::vector<std::size_t> matches, totals;  // clipped n-gram counts per order
  std::size_t hyp_len = 0, ref_len = 0;
  double brevity_penalty = 0.0;
  double score = 0.0;  // percentage
};

// Corpus-level BLEU without smoothing. Throws PreconditionError on an empty
// corpus or mismatched list lengths.
BleuStats bleu_stats(const std::vector<Sentence>& hypotheses,
                     const std::vector<Sentence>& references, std::size_t max_n = 4);
double bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
            std::size_t max_n = 4);

}  // namespace twoway
