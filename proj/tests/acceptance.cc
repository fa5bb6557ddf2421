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

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criterion 4 trains a model and takes several minutes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "twoway/config.h"
#include "twoway/decoding.h"
#include "twoway/gradcheck.h"
#include "twoway/grid.h"
#include "twoway/model.h"
#include "twoway/rng.h"
#include "twoway/text.h"
#include "twoway/training.h"

namespace twoway {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::vector<int> Framed(std::vector<int> ids) {
  ids.insert(ids.begin(), kBosId);
  ids.push_back(kEosId);
  return ids;
}

std::vector<int> RandomIds(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids;
  for (std::size_t k = 0; k < n; ++k) ids.push_back(int(rng.uniform_int(kNumReserved, vocab - 1)));
  return ids;
}

ModelConfig Tiny(std::size_t src_vocab, std::size_t tgt_vocab) {
  ModelConfig m;
  m.src_vocab = src_vocab;
  m.tgt_vocab = tgt_vocab;
  m.d_model = 8;
  m.d_ff = 12;
  m.heads = 2;
  m.layers = 1;
  m.d_cell = 6;
  m.max_positions = 64;
  return m;
}

BidirModelParams<double> RandomModel(const ModelConfig& config, Rng& rng) {
  auto p = BidirModelParams<double>::Init(config, rng);
  for (auto& [name, t] : p.Named()) {
    const double gain = name.rfind("out_", 0) == 0 ? 3.0 : 1.0;
    for (auto& v : t->mutable_data()) v = gain * (v + rng.uniform(-0.3, 0.3));
  }
  return p;
}

template <typename T>
EncodedSequence<T> RandomStates(std::size_t len, std::size_t d_model, Rng& rng) {
  EncodedSequence<T> seq{Tensor<T>(Shape{len + 1, d_model}, T(0)),
                         std::vector<bool>(len + 1, true)};
  for (auto& v : seq.states.mutable_data()) v = T(rng.uniform(-1.0, 1.0));
  return seq;
}

Verdict GradientSuite() {
  const auto report = RunGradCheck();
  Verdict v;
  v.pass = report.passed && report.worst <= 1e-3 && report.seconds < 120.0 &&
           report.groups.size() == GradCheckGroups().size();
  for (const auto& g : report.groups) v.pass = v.pass && g.checked > 0 && g.worst <= 1e-3;
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst rel error %.3e over %zu groups in %.1f s", report.worst,
                report.groups.size(), report.seconds);
  v.detail = buf;
  return v;
}

Verdict ScheduleEquivalence() {
  Rng rng(21);
  double worst = 0.0;
  bool phases_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t J = std::size_t(rng.uniform_int(1, 12));
    const std::size_t I = std::size_t(rng.uniform_int(1, 12));
    const std::size_t d_model = 8, d_cell = std::size_t(rng.uniform_int(2, 8));
    auto p = TwoDLSTMParams<float>::Init(d_model, d_cell, rng);
    auto src = RandomStates<float>(J, d_model, rng);
    auto tgt = RandomStates<float>(I, d_model, rng);
    const auto diag = forward_diagonal(p, src, tgt);
    phases_ok = phases_ok && diag.phases == I + J - 1;
    for (const auto& other :
         {forward_naive(p, src, tgt), forward_rows(p, src, tgt), forward_columns(p, src, tgt)}) {
      for (std::size_t k = 0; k < diag.z.numel(); ++k) {
        worst = std::max(worst, double(std::fabs(diag.z[k] - other.z[k])));
        worst = std::max(worst, double(std::fabs(diag.c[k] - other.c[k])));
      }
    }
  }
  Verdict v;
  v.pass = phases_ok && worst <= 1e-6;
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "50 float32 instances up to 12x12, max |diff| %.2e, phases %s I+J-1", worst,
                phases_ok ? "==" : "!=");
  v.detail = buf;
  return v;
}

Verdict Causality() {
  Rng rng(22);
  std::size_t violations = 0, checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    // Lattice: perturb encoder states at and after (j0, i0).
    const std::size_t J = 7, I = 6, d_model = 6, d_cell = 4;
    auto p = TwoDLSTMParams<double>::Init(d_model, d_cell, rng);
    auto src = RandomStates<double>(J, d_model, rng), tgt = RandomStates<double>(I, d_model, rng);
    const auto base = forward_diagonal(p, src, tgt);
    const std::size_t j0 = std::size_t(rng.uniform_int(1, J));
    const std::size_t i0 = std::size_t(rng.uniform_int(1, I));
    auto src2 = EncodedSequence<double>{src.states.clone(), src.mask};
    auto tgt2 = EncodedSequence<double>{tgt.states.clone(), tgt.mask};
    for (std::size_t r = j0; r <= J; ++r) {
      for (std::size_t k = 0; k < d_model; ++k) src2.states.mutable_data()[r * d_model + k] += rng.normal();
    }
    for (std::size_t r = i0; r <= I; ++r) {
      for (std::size_t k = 0; k < d_model; ++k) tgt2.states.mutable_data()[r * d_model + k] += rng.normal();
    }
    const auto moved = forward_diagonal(p, src2, tgt2);
    for (std::size_t j = 1; j <= j0; ++j) {
      for (std::size_t i = 1; i <= i0; ++i) {
        for (std::size_t k = 0; k < d_cell; ++k) {
          ++checked;
          if (base.z_at(j, i, k) != moved.z_at(j, i, k)) ++violations;
        }
      }
    }

    // Full model: the distribution at each position ignores own-side tokens
    // from that position on.
    auto model = RandomModel(Tiny(9, 10), rng);
    const auto s = RandomIds(rng, 5, 9), t = RandomIds(rng, 4, 10);
    const auto [pt, ps] = teacher_forced_distributions(model, Framed(s), Framed(t));
    const std::size_t cut_t = std::size_t(rng.uniform_int(0, 3));
    auto t2 = t;
    for (std::size_t k = cut_t; k < t2.size(); ++k) t2[k] = int(rng.uniform_int(kNumReserved, 9));
    t2.push_back(int(rng.uniform_int(kNumReserved, 9)));
    const std::size_t cut_s = std::size_t(rng.uniform_int(0, 4));
    auto s2 = s;
    for (std::size_t k = cut_s; k < s2.size(); ++k) s2[k] = int(rng.uniform_int(kNumReserved, 8));
    const auto [pt2, _a] = teacher_forced_distributions(model, Framed(s), Framed(t2));
    const auto [_b, ps2] = teacher_forced_distributions(model, Framed(s2), Framed(t));
    for (std::size_t r = 0; r <= cut_t; ++r) {
      for (std::size_t c = 0; c < pt.cols(); ++c) {
        ++checked;
        if (pt.at(r, c) != pt2.at(r, c)) ++violations;
      }
    }
    for (std::size_t r = 0; r <= cut_s; ++r) {
      for (std::size_t c = 0; c < ps.cols(); ++c) {
        ++checked;
        if (ps.at(r, c) != ps2.at(r, c)) ++violations;
      }
    }
  }
  Verdict v;
  v.pass = violations == 0;
  v.detail = std::to_string(checked) + " values checked bitwise over 20 models, " +
             std::to_string(violations) + " changed";
  return v;
}

std::vector<Example> ToExamples(const ParallelCorpus& corpus, const Vocabulary& sv,
                                const Vocabulary& tv) {
  std::vector<Example> out;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    out.push_back({sv.Encode(corpus.src[k]), tv.Encode(corpus.tgt[k])});
  }
  return out;
}

Verdict JointReverseTask() {
  const auto start = Clock::now();
  SyntheticSpec spec;
  spec.task = SyntheticTask::kReverse;
  spec.vocab = 20;
  spec.min_len = 3;
  spec.max_len = 10;
  spec.count = 10000;
  spec.seed = 11;
  const auto train = gen_synthetic(spec);
  spec.count = 500;
  spec.seed = 12;
  const auto test = gen_synthetic(spec);
  spec.count = 100;
  spec.seed = 13;
  const auto dev = gen_synthetic(spec);

  RunConfig config;
  config.d_model = 64;
  config.d_cell = 64;
  config.layers = 2;
  config.heads = 4;
  config.d_ff = 128;
  config.lr = 0.003;
  config.dropout = 0.0;
  config.l2_2dlstm = 0.0;
  config.batch_tokens = 1400;
  config.steps = 6000;
  config.checkpoint_every = 250;
  config.patience = 2;
  config.Validate();
  const auto sv = Vocabulary::Build(train.src), tv = Vocabulary::Build(train.tgt);
  Trainer trainer(config, config.Model(sv.size(), tv.size()), ToExamples(train, sv, tv),
                  ToExamples(dev, sv, tv));
  trainer.Run(nullptr, "");
  const double train_seconds = Seconds(start);

  const BeamConfig beam{4, 0, config.alpha};
  std::size_t fwd_ok = 0, bwd_ok = 0, round_trip = 0;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const auto src = sv.Encode(test.src[k]), tgt = tv.Encode(test.tgt[k]);
    BeamConfig b = beam;
    b.max_len = config.max_len_factor * src.size() + config.max_len_offset;
    const auto hyp = decode(trainer.params(), src, Direction::kForward, b).tokens;
    if (hyp == tgt) ++fwd_ok;
    b.max_len = config.max_len_factor * tgt.size() + config.max_len_offset;
    if (decode(trainer.params(), tgt, Direction::kBackward, b).tokens == src) ++bwd_ok;
    if (!hyp.empty()) {
      b.max_len = config.max_len_factor * hyp.size() + config.max_len_offset;
      if (decode(trainer.params(), hyp, Direction::kBackward, b).tokens == src) ++round_trip;
    }
  }
  const double total = Seconds(start);
  const double fwd = double(fwd_ok) / double(test.size());
  const double bwd = double(bwd_ok) / double(test.size());
  Verdict v;
  v.pass = fwd >= 0.95 && bwd >= 0.95 && total < 900.0;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "exact match fwd %.1f%% bwd %.1f%% (beam 4, 500 held-out), round trip %.1f%%, "
                "%zu steps, train %.0f s, total %.0f s",
                100 * fwd, 100 * bwd, 100.0 * double(round_trip) / double(test.size()),
                std::size_t(trainer.step()), train_seconds, total);
  v.detail = buf;
  return v;
}

Verdict ExhaustiveDecoding() {
  Rng rng(24);
  double worst = 0.0;
  std::size_t mismatches = 0, cases = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto p = RandomModel(Tiny(6, 6), rng);
    for (Direction dir : {Direction::kForward, Direction::kBackward}) {
      const auto cond = RandomIds(rng, std::size_t(rng.uniform_int(1, 4)), 6);
      // Scores every output of at most two tokens from full-grid rows.
      auto score = [&](const std::vector<int>& seq) {
        std::vector<int> body;
        for (int t : seq) {
          if (t != kEosId) body.push_back(t);
        }
        const auto rows = dir == Direction::kForward
                              ? teacher_forced_distributions(p, Framed(cond), Framed(body)).first
                              : teacher_forced_distributions(p, Framed(body), Framed(cond)).second;
        double s = 0.0;
        for (std::size_t k = 0; k < seq.size(); ++k) s += std::log(rows.at(k, seq[k]));
        return s;
      };
      std::vector<std::vector<int>> all{{kEosId}};
      for (int a = kUnkId; a < 6; ++a) {
        for (int b = kEosId; b < 6; ++b) all.push_back({a, b});
      }
      double best = -std::numeric_limits<double>::infinity();
      std::vector<int> best_seq;
      for (const auto& seq : all) {
        const double s = score(seq);
        if (s > best) {
          best = s;
          best_seq = seq;
        }
      }
      const auto result = decode(p, cond, dir, BeamConfig{6, 2, 0.0});
      auto emitted = result.tokens;
      if (result.ended_with_eos) emitted.push_back(kEosId);
      ++cases;
      if (emitted != best_seq) ++mismatches;
      worst = std::max(worst, std::fabs(result.score - best));
    }
  }
  Verdict v;
  v.pass = mismatches == 0 && worst <= 1e-6;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu cases, %zu sequence mismatches, max score diff %.2e",
                cases, mismatches, worst);
  v.detail = buf;
  return v;
}

Verdict StreamingCache() {
  Rng rng(25);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto p = RandomModel(Tiny(9, 10), rng);
    const auto src = RandomIds(rng, std::size_t(rng.uniform_int(1, 8)), 9);
    const auto tgt = RandomIds(rng, std::size_t(rng.uniform_int(1, 8)), 10);
    const auto [pt, ps] = teacher_forced_distributions(p, Framed(src), Framed(tgt));
    const auto fwd = forced_stream_distributions(p, src, tgt, Direction::kForward);
    const auto bwd = forced_stream_distributions(p, tgt, src, Direction::kBackward);
    if (fwd.shape() != pt.shape() || bwd.shape() != ps.shape()) return {false, "shape mismatch"};
    for (std::size_t k = 0; k < pt.numel(); ++k) worst = std::max(worst, std::fabs(fwd[k] - pt[k]));
    for (std::size_t k = 0; k < ps.numel(); ++k) worst = std::max(worst, std::fabs(bwd[k] - ps[k]));
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "20 pairs, max |diff| %.2e", worst);
  return {worst <= 1e-5, buf};
}

bool SameBits(const Tensor<float>& a, const Tensor<float>& b) {
  return a.numel() == b.numel() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

Verdict TrainingMechanics() {
  std::ostringstream detail;
  bool pass = true;

  // Uniform output layer: each example costs I ln|V_e| + J ln|V_f|.
  Rng rng(26);
  const auto uniform = BidirModelParams<double>::Zeros(Tiny(9, 11));
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = RandomIds(rng, std::size_t(rng.uniform_int(1, 8)), 9);
    const auto t = RandomIds(rng, std::size_t(rng.uniform_int(1, 8)), 11);
    const auto loss = joint_loss(uniform, MakeBatch({s}, {t}));
    const double expected =
        double(t.size() + 1) * std::log(11.0) + double(s.size() + 1) * std::log(9.0);
    worst = std::max(worst, std::fabs(loss.total.item() - expected));
  }
  pass = pass && worst <= 1e-6;
  detail << "uniform loss max |diff| " << worst;

  // Patience 3: decay by exactly 0.9 on the third non-improving value.
  ScheduleState schedule;
  double lr = 0.001;
  bool early = false;
  for (double ppl : {4.0, 3.0, 3.5, 3.0}) early = early || maybe_decay(schedule, ppl, lr);
  const bool decayed = maybe_decay(schedule, 3.2, lr);
  const bool exact = decayed && !early && lr == 0.001 * 0.9 && schedule.bad == 0;
  pass = pass && exact;
  detail << "; lr decay " << (exact ? "0.001 -> 0.0009 after 3 non-improving" : "WRONG");

  // Save at step 6, continue 6 steps; reload into a fresh trainer and
  // repeat. Parameters and moments must agree bit for bit.
  SyntheticSpec spec;
  spec.task = SyntheticTask::kCopy;
  spec.vocab = 8;
  spec.count = 60;
  spec.min_len = 2;
  spec.max_len = 6;
  spec.seed = 4;
  const auto corpus = gen_synthetic(spec);
  const auto sv = Vocabulary::Build(corpus.src), tv = Vocabulary::Build(corpus.tgt);
  RunConfig config;
  config.d_model = 16;
  config.d_cell = 8;
  config.layers = 1;
  config.heads = 2;
  config.d_ff = 24;
  config.dropout = 0.2;
  config.batch_tokens = 80;
  config.seed = 9;
  const auto model = config.Model(sv.size(), tv.size());
  const auto examples = ToExamples(corpus, sv, tv);
  Trainer a(config, model, examples, examples);
  for (int k = 0; k < 6; ++k) a.Step();
  const auto saved = a.Save();
  for (int k = 0; k < 6; ++k) a.Step();
  Trainer b(config, model, examples, examples);
  b.Load(saved);
  for (int k = 0; k < 6; ++k) b.Step();
  bool bitwise = a.step() == b.step() && a.lr() == b.lr();
  auto na = a.params().Named(), nb = b.params().Named();
  for (std::size_t k = 0; k < na.size(); ++k) {
    bitwise = bitwise && SameBits(*na[k].second, *nb[k].second);
  }
  for (std::size_t k = 0; k < a.optimizer().m.size(); ++k) {
    bitwise = bitwise && a.optimizer().m[k] == b.optimizer().m[k] &&
              a.optimizer().v[k] == b.optimizer().v[k];
  }
  pass = pass && bitwise;
  detail << "; resumed trajectory " << (bitwise ? "bitwise equal" : "DIVERGED");
  return {pass, detail.str()};
}

Verdict Bleu() {
  const std::vector<Sentence> refs{{"the", "cat", "sat", "on", "the", "mat"},
                                   {"a", "b", "c", "d", "e"}};
  const double identity = bleu(refs, refs);
  const auto hand = bleu_stats({{"the", "the", "the"}}, {{"the", "cat", "on", "a", "mat"}});
  const bool hand_ok = hand.matches[0] == 1 && hand.totals[0] == 3 && hand.score == 0.0;
  char buf[128];
  std::snprintf(buf, sizeof buf, "identity %.1f, hand case unigram %zu/%zu", identity,
                hand.matches[0], hand.totals[0]);
  return {identity == 100.0 && hand_ok, buf};
}

}  // namespace
}  // namespace twoway

int main() {
  using namespace twoway;
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"gradient suite", GradientSuite},
      {"schedule equivalence", ScheduleEquivalence},
      {"2D causality", Causality},
      {"joint bidirectional learning (reverse task)", JointReverseTask},
      {"decoding exactness", ExhaustiveDecoding},
      {"streaming-cache equivalence", StreamingCache},
      {"training mechanics", TrainingMechanics},
      {"BLEU", Bleu},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Verdict v;
    try {
      v = criteria[k].second();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %zu %s: %s (%s)\n", k + 1, v.pass ? "PASS" : "FAIL", criteria[k].first,
                v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failed;
  }
  return failed ? 1 : 0;
}
