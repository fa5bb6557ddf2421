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

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "twoway/model.h"
#include "twoway/rng.h"
#include "twoway/tensor.h"
#include "twoway/text.h"

namespace twoway {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("twoway_text_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
             "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void WriteFile(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

TEST(Vocabulary, ReservedIdsAndOrdering) {
  auto v = Vocabulary::Build({{"b", "a", "b"}, {"c", "a", "b"}});
  EXPECT_EQ(v.size(), 7u);
  EXPECT_EQ(v.Token(kPadId), "<pad>");
  EXPECT_EQ(v.Token(kBosId), "<s>");
  EXPECT_EQ(v.Token(kEosId), "</s>");
  EXPECT_EQ(v.Token(kUnkId), "<unk>");
  EXPECT_EQ(v.Id("b"), 4);  // three occurrences
  EXPECT_EQ(v.Id("a"), 5);
  EXPECT_EQ(v.Id("c"), 6);
  EXPECT_EQ(v.Id("zzz"), kUnkId);
  EXPECT_EQ(Vocabulary::Build({{"b", "a", "b"}, {"c", "a", "b"}}, 5).size(), 5u);
}

TEST(Vocabulary, EncodeDecodeAndFileRoundTrip) {
  TempDir dir;
  auto v = Vocabulary::Build({{"x", "y", "z"}});
  const auto ids = v.Encode({"z", "q", "x"});
  EXPECT_EQ(ids[1], kUnkId);
  std::vector<int> framed{kBosId};
  framed.insert(framed.end(), ids.begin(), ids.end());
  framed.push_back(kEosId);
  framed.push_back(kPadId);
  EXPECT_EQ(v.Decode(framed), (Sentence{"z", "<unk>", "x"}));
  v.Save(dir.file("v.txt"));
  auto loaded = Vocabulary::Load(dir.file("v.txt"));
  ASSERT_EQ(loaded.size(), v.size());
  for (int id = 0; id < int(v.size()); ++id) EXPECT_EQ(loaded.Token(id), v.Token(id));
  EXPECT_THROW(Vocabulary::Load(dir.file("missing.txt")), DataError);
}

TEST(Bpe, ZeroMergesIsCharacterLevel) {
  auto model = learn_bpe({"abc ab"}, 0);
  EXPECT_EQ(model.merge_count(), 0u);
  EXPECT_EQ(apply_bpe(model, "abc ab"), (Sentence{"a", "b", "c</w>", "a", "b</w>"}));
}

TEST(Bpe, MostFrequentPairMergesFirst) {
  auto model = learn_bpe({"aaab aaab"}, 1);
  ASSERT_EQ(model.merge_count(), 1u);
  EXPECT_EQ(model.merges[0], (std::pair<std::string, std::string>{"a", "a"}));
}

TEST(Bpe, TiesBrokenLexicographically) {
  // Every adjacent pair occurs once; (a, b) is the smallest.
  auto model = learn_bpe({"cd ab"}, 1);
  ASSERT_EQ(model.merge_count(), 1u);
  EXPECT_EQ(model.merges[0], (std::pair<std::string, std::string>{"a", "b</w>"}));
}

TEST(Bpe, DeterministicAndBounded) {
  const std::vector<std::string> corpus{"low lower lowest", "new newer newest", "wide wider"};
  auto a = learn_bpe(corpus, 10);
  auto b = learn_bpe(corpus, 10);
  EXPECT_EQ(a.merges, b.merges);
  EXPECT_LE(a.merge_count(), 10u);
  EXPECT_LE(learn_bpe(corpus, 1000).merge_count(), 1000u);
  EXPECT_THROW(learn_bpe({}, 5), PreconditionError);
}

TEST(Bpe, TrainingLinesRoundTrip) {
  const std::vector<std::string> corpus{"the cat sat", "on the mat", "the cats sat on mats"};
  auto model = learn_bpe(corpus, 12);
  for (const auto& line : corpus) EXPECT_EQ(undo_bpe(apply_bpe(model, line)), line);
}

TEST(Bpe, EmptyAndUnseenCharacters) {
  auto model = learn_bpe({"ab ab ab"}, 3);
  EXPECT_TRUE(apply_bpe(model, "").empty());
  EXPECT_EQ(apply_bpe(model, "xyz"), (Sentence{"x", "y", "z</w>"}));
  EXPECT_EQ(apply_bpe(model, "ab"), (Sentence{"ab</w>"}));
}

TEST(Bpe, RandomLinesRoundTrip) {
  Rng rng(1);
  const std::string alphabet = "abcdeé";
  auto random_line = [&] {
    std::string line;
    const auto words = rng.uniform_int(0, 6);
    for (std::int64_t w = 0; w < words; ++w) {
      if (w) line += ' ';
      const auto len = rng.uniform_int(1, 7);
      for (std::int64_t c = 0; c < len; ++c) {
        const auto k = rng.uniform_int(0, 5);
        line += k == 5 ? std::string("é") : std::string(1, alphabet[std::size_t(k)]);
      }
    }
    return line;
  };
  std::vector<std::string> corpus;
  for (int n = 0; n < 200; ++n) corpus.push_back(random_line());
  corpus.push_back("abc");
  auto model = learn_bpe(corpus, 40);
  for (int n = 0; n < 1000; ++n) {
    const auto line = random_line();
    EXPECT_EQ(undo_bpe(apply_bpe(model, line)), line);
  }
}

TEST(Bpe, FileRoundTrip) {
  TempDir dir;
  auto model = learn_bpe({"aaab aaab abab"}, 4);
  SaveBpe(model, dir.file("bpe.txt"));
  std::ifstream in(dir.file("bpe.txt"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "#version 1");
  EXPECT_EQ(LoadBpe(dir.file("bpe.txt")).merges, model.merges);
  WriteFile(dir.file("bad.txt"), "#version 9\n");
  EXPECT_THROW(LoadBpe(dir.file("bad.txt")), DataError);
}

TEST(Synthetic, HandExamples) {
  SyntheticSpec spec;
  spec.vocab = 5;
  const Sentence abc{"a", "b", "c"};
  spec.task = SyntheticTask::kCopy;
  EXPECT_EQ(apply_synthetic(spec, abc), abc);
  spec.task = SyntheticTask::kReverse;
  EXPECT_EQ(apply_synthetic(spec, abc), (Sentence{"c", "b", "a"}));
  spec.task = SyntheticTask::kShiftCipher;
  spec.shift = 1;
  EXPECT_EQ(apply_synthetic(spec, {"a", "e"}), (Sentence{"b", "a"}));
  spec.task = SyntheticTask::kSort;
  EXPECT_EQ(apply_synthetic(spec, {"c", "a", "b", "a"}), (Sentence{"a", "a", "b", "c"}));
  EXPECT_THROW(invert_synthetic(spec, abc), DomainError);
  EXPECT_EQ(SyntheticSymbol(0), "a");
  EXPECT_EQ(SyntheticSymbol(25), "z");
  EXPECT_EQ(SyntheticSymbol(26), "w26");
}

TEST(Synthetic, DeterministicAndInvertible) {
  for (SyntheticTask task :
       {SyntheticTask::kCopy, SyntheticTask::kReverse, SyntheticTask::kShiftCipher}) {
    SyntheticSpec spec;
    spec.task = task;
    spec.count = 200;
    spec.min_len = 2;
    spec.max_len = 9;
    spec.vocab = 30;
    spec.shift = 3;
    spec.seed = 4;
    auto a = gen_synthetic(spec);
    auto b = gen_synthetic(spec);
    ASSERT_EQ(a.size(), 200u);
    EXPECT_EQ(a.src, b.src);
    EXPECT_EQ(a.tgt, b.tgt);
    for (std::size_t n = 0; n < a.size(); ++n) {
      EXPECT_GE(a.src[n].size(), 2u);
      EXPECT_LE(a.src[n].size(), 9u);
      EXPECT_EQ(a.tgt[n], apply_synthetic(spec, a.src[n]));
      EXPECT_EQ(invert_synthetic(spec, a.tgt[n]), a.src[n]);
    }
    EXPECT_EQ(ParseSyntheticTask(SyntheticTaskName(task)), task);
  }
}

TEST(Synthetic, InvalidSpecsRejected) {
  SyntheticSpec spec;
  spec.vocab = 1;
  EXPECT_ANY_THROW(gen_synthetic(spec));
  spec.vocab = 5;
  spec.min_len = 6;
  spec.max_len = 3;
  EXPECT_ANY_THROW(gen_synthetic(spec));
  spec.min_len = 0;
  spec.max_len = 3;
  EXPECT_ANY_THROW(gen_synthetic(spec));
  EXPECT_ANY_THROW(ParseSyntheticTask("rot13"));
}

TEST(Corpus, LoadsAlignedFilesAndDropsEmptyPairs) {
  TempDir dir;
  WriteFile(dir.file("a.src"), "x y\n\nz\n");
  WriteFile(dir.file("a.tgt"), "1 2\n3\n4 5 6\n");
  auto corpus = LoadCorpus(dir.file("a.src"), dir.file("a.tgt"));
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus.src[1], (Sentence{"z"}));
  EXPECT_EQ(corpus.tgt[1], (Sentence{"4", "5", "6"}));
  WriteFile(dir.file("b.tgt"), "1\n");
  EXPECT_THROW(LoadCorpus(dir.file("a.src"), dir.file("b.tgt")), DataError);
  try {
    LoadCorpus(dir.file("nope.src"), dir.file("a.tgt"));
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.src"), std::string::npos);
  }
  SaveSentences(corpus.src, dir.file("out.txt"));
  EXPECT_EQ(LoadSentences(dir.file("out.txt")), corpus.src);
}

TEST(Bleu, IdentityIsHundred) {
  const std::vector<Sentence> refs{{"a", "b", "c", "d", "e"}, {"x", "y"}, {"q"}};
  EXPECT_DOUBLE_EQ(bleu(refs, refs), 100.0);
}

TEST(Bleu, ClippedUnigramHandCase) {
  auto stats = bleu_stats({{"the", "the", "the"}}, {{"the", "cat"}});
  EXPECT_EQ(stats.matches[0], 1u);
  EXPECT_EQ(stats.totals[0], 3u);
  EXPECT_EQ(double(stats.matches[0]) / double(stats.totals[0]), 1.0 / 3.0);
  EXPECT_EQ(stats.score, 0.0);  // no bigram matches, no smoothing
}

TEST(Bleu, NoFourGramMatchesIsZero) {
  const std::vector<Sentence> hyp{{"a", "b", "c", "d", "e"}};
  const std::vector<Sentence> ref{{"a", "b", "c", "x", "e"}};
  EXPECT_EQ(bleu(hyp, ref), 0.0);
}

TEST(Bleu, BrevityPenaltyAndHandScore) {
  const std::vector<Sentence> hyp{{"a", "b", "c", "d"}};
  const std::vector<Sentence> ref{{"a", "b", "c", "d", "e", "f"}};
  auto stats = bleu_stats(hyp, ref);
  EXPECT_NEAR(stats.brevity_penalty, std::exp(1.0 - 6.0 / 4.0), 1e-15);
  EXPECT_NEAR(stats.score, 100.0 * std::exp(1.0 - 6.0 / 4.0), 1e-12);
}

TEST(Bleu, PermutationInvariantAndErrors) {
  std::vector<Sentence> hyp{{"a", "b", "c", "d", "e"}, {"p", "q", "r", "s"}, {"u", "v"}};
  std::vector<Sentence> ref{{"a", "b", "c", "d", "f"}, {"p", "q", "r", "s", "t"}, {"u", "w"}};
  const double base = bleu(hyp, ref);
  std::swap(hyp[0], hyp[2]);
  std::swap(ref[0], ref[2]);
  EXPECT_DOUBLE_EQ(bleu(hyp, ref), base);
  EXPECT_THROW(bleu({}, {}), PreconditionError);
  EXPECT_THROW(bleu(hyp, {ref[0]}), PreconditionError);
}

}  // namespace
}  // namespace twoway
