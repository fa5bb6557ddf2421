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

#include "twoway/text.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "twoway/rng.h"
#include "twoway/tensor.h"

namespace twoway {

namespace {

const char* const kReserved[] = {"<pad>", "<s>", "</s>", "<unk>"};
constexpr std::size_t kReservedCount = 4;

// Splits a word into UTF-8 code points.
std::vector<std::string> Characters(const std::string& word) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < word.size();) {
    const auto lead = static_cast<unsigned char>(word[k]);
    std::size_t n = 1;
    if (lead >= 0xF0) n = 4;
    else if (lead >= 0xE0) n = 3;
    else if (lead >= 0xC0) n = 2;
    n = std::min(n, word.size() - k);
    out.push_back(word.substr(k, n));
    k += n;
  }
  return out;
}

std::vector<std::string> WordSymbols(const std::string& word) {
  auto symbols = Characters(word);
  if (!symbols.empty()) symbols.back() += kEndOfWord;
  return symbols;
}

void MergePair(std::vector<std::string>& symbols, const std::string& left,
               const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t k = 0; k < symbols.size(); ++k) {
    if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
      out.push_back(left + right);
      ++k;
    } else {
      out.push_back(symbols[k]);
    }
  }
  symbols.swap(out);
}

std::ifstream OpenForRead(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

std::ofstream OpenForWrite(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

std::map<std::vector<std::string>, std::size_t> NgramCounts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t k = 0; k + n <= s.size(); ++k) {
    ++counts[std::vector<std::string>(s.begin() + k, s.begin() + k + n)];
  }
  return counts;
}

}  // namespace

Sentence SplitWhitespace(const std::string& line) {
  std::istringstream in(line);
  Sentence out;
  for (std::string token; in >> token;) out.push_back(token);
  return out;
}

std::string JoinTokens(const Sentence& tokens) {
  std::string out;
  for (std::size_t k = 0; k < tokens.size(); ++k) {
    if (k) out += ' ';
    out += tokens[k];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* token : kReserved) Add(token);
}

Vocabulary Vocabulary::Build(const std::vector<Sentence>& sentences, std::size_t max_size) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : sentences) {
    for (const auto& token : s) ++counts[token];
  }
  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [token, count] : ordered) {
    if (max_size && vocab.size() >= max_size) break;
    vocab.Add(token);
  }
  return vocab;
}

Vocabulary Vocabulary::Load(const std::string& path) {
  auto in = OpenForRead(path);
  Vocabulary vocab;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty() || vocab.Contains(line)) {
      throw DataError(path + ":" + std::to_string(line_no) + ": empty or duplicate token");
    }
    vocab.Add(line);
  }
  return vocab;
}

void Vocabulary::Save(const std::string& path) const {
  auto out = OpenForWrite(path);
  for (std::size_t k = kReservedCount; k < tokens_.size(); ++k) out << tokens_[k] << '\n';
}

int Vocabulary::Add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::Id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? 3 : it->second;
}

const std::string& Vocabulary::Token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<int> Vocabulary::Encode(const Sentence& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(Id(t));
  return ids;
}

Sentence Vocabulary::Decode(const std::vector<int>& ids) const {
  Sentence out;
  for (int id : ids) {
    if (id == 0 || id == 1 || id == 2) continue;
    out.push_back(Token(id));
  }
  return out;
}

BpeModel learn_bpe(const std::vector<std::string>& lines, std::size_t merges) {
  std::map<std::string, std::size_t> word_counts;
  for (const auto& line : lines) {
    for (const auto& word : SplitWhitespace(line)) ++word_counts[word];
  }
  if (word_counts.empty()) throw PreconditionError("learn_bpe: empty corpus");
  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [word, count] : word_counts) words.emplace_back(WordSymbols(word), count);

  BpeModel model;
  while (model.merges.size() < merges) {
    std::map<std::pair<std::string, std::string>, std::size_t> pairs;
    for (const auto& [symbols, count] : words) {
      for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
        pairs[{symbols[k], symbols[k + 1]}] += count;
      }
    }
    if (pairs.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    model.merges.push_back(best->first);
    for (auto& [symbols, count] : words) MergePair(symbols, best->first.first, best->first.second);
  }
  return model;
}

Sentence apply_bpe(const BpeModel& model, const std::string& line) {
  Sentence out;
  for (const auto& word : SplitWhitespace(line)) {
    auto symbols = WordSymbols(word);
    for (const auto& [left, right] : model.merges) {
      if (symbols.size() < 2) break;
      MergePair(symbols, left, right);
    }
    out.insert(out.end(), symbols.begin(), symbols.end());
  }
  return out;
}

std::string undo_bpe(const Sentence& tokens) {
  const std::string marker = kEndOfWord;
  std::string out, word;
  for (const auto& token : tokens) {
    if (token.size() >= marker.size() &&
        token.compare(token.size() - marker.size(), marker.size(), marker) == 0) {
      word += token.substr(0, token.size() - marker.size());
      if (!out.empty()) out += ' ';
      out += word;
      word.clear();
    } else {
      word += token;
    }
  }
  if (!word.empty()) {
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

void SaveBpe(const BpeModel& model, const std::string& path) {
  auto out = OpenForWrite(path);
  out << "#version 1\n";
  for (const auto& [left, right] : model.merges) out << left << ' ' << right << '\n';
}

BpeModel LoadBpe(const std::string& path) {
  auto in = OpenForRead(path);
  std::string line;
  if (!std::getline(in, line) || line != "#version 1") {
    throw DataError(path + ": missing '#version 1' header");
  }
  BpeModel model;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    auto parts = SplitWhitespace(line);
    if (parts.size() != 2) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected two symbols");
    }
    model.merges.emplace_back(parts[0], parts[1]);
  }
  return model;
}

std::vector<Sentence> LoadSentences(const std::string& path) {
  auto in = OpenForRead(path);
  std::vector<Sentence> out;
  for (std::string line; std::getline(in, line);) out.push_back(SplitWhitespace(line));
  return out;
}

void SaveSentences(const std::vector<Sentence>& sentences, const std::string& path) {
  auto out = OpenForWrite(path);
  for (const auto& s : sentences) out << JoinTokens(s) << '\n';
}

ParallelCorpus LoadCorpus(const std::string& src_path, const std::string& tgt_path) {
  auto src = LoadSentences(src_path);
  auto tgt = LoadSentences(tgt_path);
  if (src.size() != tgt.size()) {
    throw DataError("line counts differ: '" + src_path + "' has " + std::to_string(src.size()) +
                    ", '" + tgt_path + "' has " + std::to_string(tgt.size()));
  }
  ParallelCorpus corpus;
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k].empty() || tgt[k].empty()) continue;
    corpus.src.push_back(std::move(src[k]));
    corpus.tgt.push_back(std::move(tgt[k]));
  }
  return corpus;
}

const char* SyntheticTaskName(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::kCopy: return "copy";
    case SyntheticTask::kReverse: return "reverse";
    case SyntheticTask::kShiftCipher: return "shift-cipher";
    case SyntheticTask::kSort: return "sort";
  }
  return "?";
}

SyntheticTask ParseSyntheticTask(const std::string& name) {
  for (auto task : {SyntheticTask::kCopy, SyntheticTask::kReverse, SyntheticTask::kShiftCipher,
                    SyntheticTask::kSort}) {
    if (name == SyntheticTaskName(task)) return task;
  }
  throw DomainError("unknown task '" + name + "' (expected copy, reverse, shift-cipher or sort)");
}

std::string SyntheticSymbol(std::size_t k) {
  if (k < 26) return std::string(1, static_cast<char>('a' + k));
  return "w" + std::to_string(k);
}

namespace {

std::size_t SymbolIndex(const std::string& symbol, std::size_t vocab) {
  std::size_t k = vocab;
  if (symbol.size() == 1 && symbol[0] >= 'a' && symbol[0] <= 'z') {
    k = static_cast<std::size_t>(symbol[0] - 'a');
  } else if (symbol.size() > 1 && symbol[0] == 'w') {
    k = std::stoul(symbol.substr(1));
  }
  if (k >= vocab) throw DomainError("'" + symbol + "' is not a synthetic symbol");
  return k;
}

Sentence Shift(const SyntheticSpec& spec, const Sentence& s, std::size_t by) {
  Sentence out;
  for (const auto& symbol : s) {
    out.push_back(SyntheticSymbol((SymbolIndex(symbol, spec.vocab) + by) % spec.vocab));
  }
  return out;
}

}  // namespace

Sentence apply_synthetic(const SyntheticSpec& spec, const Sentence& source) {
  switch (spec.task) {
    case SyntheticTask::kCopy: return source;
    case SyntheticTask::kReverse: return Sentence(source.rbegin(), source.rend());
    case SyntheticTask::kShiftCipher: return Shift(spec, source, spec.shift % spec.vocab);
    case SyntheticTask::kSort: {
      Sentence out = source;
      std::sort(out.begin(), out.end(), [&spec](const auto& a, const auto& b) {
        return SymbolIndex(a, spec.vocab) < SymbolIndex(b, spec.vocab);
      });
      return out;
    }
  }
  return source;
}

Sentence invert_synthetic(const SyntheticSpec& spec, const Sentence& target) {
  switch (spec.task) {
    case SyntheticTask::kCopy: return target;
    case SyntheticTask::kReverse: return Sentence(target.rbegin(), target.rend());
    case SyntheticTask::kShiftCipher:
      return Shift(spec, target, spec.vocab - spec.shift % spec.vocab);
    case SyntheticTask::kSort: break;
  }
  throw DomainError("sort has no inverse");
}

ParallelCorpus gen_synthetic(const SyntheticSpec& spec) {
  if (spec.vocab < 2) throw PreconditionError("synthetic vocabulary needs at least 2 symbols");
  if (spec.min_len == 0 || spec.min_len > spec.max_len) {
    throw PreconditionError("invalid length range [" + std::to_string(spec.min_len) + ", " +
                            std::to_string(spec.max_len) + "]");
  }
  Rng rng(spec.seed);
  ParallelCorpus corpus;
  for (std::size_t n = 0; n < spec.count; ++n) {
    const auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.min_len),
                        static_cast<std::int64_t>(spec.max_len)));
    Sentence source;
    for (std::size_t k = 0; k < len; ++k) {
      source.push_back(SyntheticSymbol(static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(spec.vocab) - 1))));
    }
    corpus.tgt.push_back(apply_synthetic(spec, source));
    corpus.src.push_back(std::move(source));
  }
  return corpus;
}

BleuStats bleu_stats(const std::vector<Sentence>& hypotheses,
                     const std::vector<Sentence>& references, std::size_t max_n) {
  if (hypotheses.size() != references.size()) {
    throw PreconditionError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                            std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw PreconditionError("bleu: empty corpus");
  if (max_n == 0) throw PreconditionError("bleu: max_n must be positive");
  BleuStats stats;
  stats.matches.assign(max_n, 0);
  stats.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    stats.hyp_len += hypotheses[s].size();
    stats.ref_len += references[s].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      auto hyp = NgramCounts(hypotheses[s], n);
      auto ref = NgramCounts(references[s], n);
      for (const auto& [gram, count] : hyp) {
        auto it = ref.find(gram);
        stats.matches[n - 1] += std::min(count, it == ref.end() ? 0 : it->second);
        stats.totals[n - 1] += count;
      }
    }
  }
  if (stats.hyp_len == 0) return stats;
  stats.brevity_penalty =
      stats.hyp_len >= stats.ref_len
          ? 1.0
          : std::exp(1.0 - double(stats.ref_len) / double(stats.hyp_len));
  // Orders longer than every hypothesis have no n-grams at all and are left
  // out of the geometric mean.
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (stats.totals[n] == 0) continue;
    if (stats.matches[n] == 0) return stats;
    log_sum += std::log(double(stats.matches[n]) / double(stats.totals[n]));
    ++orders;
  }
  stats.score = 100.0 * stats.brevity_penalty * std::exp(log_sum / double(orders));
  return stats;
}

double bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
            std::size_t max_n) {
  return bleu_stats(hypotheses, references, max_n).score;
}

}  // namespace twoway
