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
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <vector>

#include "twoway/checkpoint.h"
#include "twoway/decoding.h"
#include "twoway/model.h"
#include "twoway/ops.h"
#include "twoway/text.h"
#include "twoway/training.h"

namespace twoway {
namespace {

namespace fs = std::filesystem;

RunConfig SmallRun() {
  RunConfig c;
  c.d_model = 16;
  c.d_cell = 16;
  c.layers = 1;
  c.heads = 2;
  c.d_ff = 32;
  c.max_positions = 64;
  c.lr = 0.003;
  c.dropout = 0.0;
  c.l2_2dlstm = 0.0;
  c.batch_tokens = 200;
  c.seed = 5;
  return c;
}

std::vector<Example> CopyExamples(std::size_t count, std::uint64_t seed, std::size_t vocab) {
  std::vector<Example> out;
  Rng rng(seed);
  for (std::size_t n = 0; n < count; ++n) {
    Example e;
    const auto len = std::size_t(rng.uniform_int(2, 5));
    for (std::size_t k = 0; k < len; ++k) e.src.push_back(int(rng.uniform_int(4, vocab - 1)));
    e.tgt = e.src;
    out.push_back(e);
  }
  return out;
}

std::vector<float> Flatten(BidirModelParams<float>& p) {
  std::vector<float> out;
  for (auto& [name, t] : p.Named()) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> w = Tensor<double>::Vector({1.5, -2.0});
  OptimizerState<double> state;
  state.Reset({&w}, 0.001);
  adam_step<double>({&w}, state);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(w[0], 1.5);
  EXPECT_EQ(w[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> w = Tensor<double>::Vector({0.0});
  OptimizerState<double> state;
  state.Reset({&w}, 0.001);
  w.mutable_grad()[0] = 1.0;
  adam_step<double>({&w}, state);
  EXPECT_NEAR(w[0], -0.001, 1e-10);
}

TEST(Adam, QuadraticTrajectoryMatchesScalarOracle) {
  Tensor<double> w = Tensor<double>::Vector({2.0, -1.0});
  OptimizerState<double> state;
  state.Reset({&w}, 0.1);
  const double target[2] = {0.5, 0.25};
  double x[2] = {2.0, -1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 1; t <= 5; ++t) {
    for (int k = 0; k < 2; ++k) {
      const double g = 2 * (x[k] - target[k]);
      m[k] = 0.9 * m[k] + 0.1 * g;
      v[k] = 0.999 * v[k] + 0.001 * g * g;
      const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
      x[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    w.zero_grad();
    w.set_requires_grad(true);
    backward(sum_squares(sub(w, Tensor<double>::Vector({0.5, 0.25}))));
    adam_step<double>({&w}, state);
    EXPECT_NEAR(w[0], x[0], 1e-12) << t;
    EXPECT_NEAR(w[1], x[1], 1e-12) << t;
  }
}

TEST(Adam, NanGradientAbortsWithoutChanges) {
  Tensor<double> w = Tensor<double>::Vector({1.0, 2.0});
  OptimizerState<double> state;
  state.Reset({&w}, 0.01);
  w.mutable_grad()[0] = 0.5;
  w.mutable_grad()[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(adam_step<double>({&w}, state), NumericError);
  EXPECT_EQ(state.step, 0u);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(state.m[0][0], 0.0);
}

TEST(Regularization, PenaltyOnGridWeightsOnly) {
  auto grid = TwoDLSTMParams<double>::Zeros(2, 1);
  grid.w.mutable_data()[3] = 2.0;
  grid.b.mutable_data()[0] = 7.0;  // biases are not penalized
  auto loss = Tensor<double>::Scalar0(1.25);
  EXPECT_EQ(apply_regularization(loss, grid, 0.0).item(), 1.25);
  EXPECT_NEAR(l2_penalty(grid, 0.05).item(), 0.2, 1e-15);
  EXPECT_NEAR(apply_regularization(loss, grid, 0.05).item(), 1.45, 1e-15);
  grid.u.mutable_data()[0] = 1.0;
  grid.v.mutable_data()[0] = -1.0;
  EXPECT_NEAR(l2_penalty(grid, 0.05).item(), 0.3, 1e-15);
}

TEST(Regularization, EvalModeIsDeterministic) {
  ModelConfig m = SmallRun().Model(10, 10);
  Rng rng(1);
  auto p = BidirModelParams<double>::Init(m, rng);
  auto batch = MakeBatch({{4, 5, 6}}, {{7, 8}});
  auto a = joint_loss(p, batch).total.item();
  auto b = joint_loss(p, batch).total.item();
  EXPECT_EQ(a, b);
  Rng d1(3), d2(3);
  LossOptions o1{0.3, &d1}, o2{0.3, &d2};
  EXPECT_EQ(joint_loss(p, batch, o1).total.item(), joint_loss(p, batch, o2).total.item());
  EXPECT_NE(joint_loss(p, batch, o1).total.item(), a);
}

TEST(Clipping, GlobalNorm) {
  Tensor<double> a = Tensor<double>::Vector({3.0}), b = Tensor<double>::Vector({4.0});
  a.mutable_grad()[0] = 3.0;
  b.mutable_grad()[0] = 4.0;
  EXPECT_NEAR(clip_global_norm<double>({&a, &b}, 1.0), 5.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
  clip_global_norm<double>({&a, &b}, 0.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
}

TEST(Schedule, ImprovingSequenceNeverDecays) {
  ScheduleState s;
  double lr = 1.0;
  for (double ppl : {10.0, 9.0, 8.0}) EXPECT_FALSE(maybe_decay(s, ppl, lr));
  EXPECT_EQ(lr, 1.0);
  EXPECT_EQ(s.best, 8.0);
}

TEST(Schedule, FlatValuesAfterBestDecayOnce) {
  ScheduleState s;
  double lr = 0.5;
  maybe_decay(s, 4.0, lr);  // establishes the best
  int events = 0;
  for (int k = 0; k < 3; ++k) events += maybe_decay(s, 4.0, lr);
  EXPECT_EQ(events, 1);
  EXPECT_EQ(s.decay_events, 1u);
  EXPECT_EQ(lr, 0.5 * 0.9);
}

TEST(Schedule, HandTrace) {
  ScheduleState s;
  double lr = 1.0;
  EXPECT_FALSE(maybe_decay(s, 10, lr));
  EXPECT_FALSE(maybe_decay(s, 11, lr));
  EXPECT_FALSE(maybe_decay(s, 10.5, lr));
  EXPECT_TRUE(maybe_decay(s, 12, lr));
  EXPECT_EQ(lr, 0.9);
  EXPECT_EQ(s.bad, 0u);
  EXPECT_THROW(maybe_decay(s, std::nan(""), lr), DomainError);
}

TEST(Perplexity, UniformModelAndBounds) {
  ModelConfig m = SmallRun().Model(4, 4);
  auto zeros = BidirModelParams<double>::Zeros(m);
  std::vector<Example> dev{{{3}, {3, 3}}, {{3, 3, 3}, {3}}};
  auto ppl = evaluate_perplexity(zeros, dev);
  EXPECT_NEAR(ppl.fwd, 4.0, 1e-12);
  EXPECT_NEAR(ppl.bwd, 4.0, 1e-12);
  Rng rng(2);
  auto p = BidirModelParams<double>::Init(m, rng);
  auto q = evaluate_perplexity(p, dev);
  EXPECT_GE(q.fwd, 1.0);
  EXPECT_GE(q.bwd, 1.0);
  EXPECT_THROW(evaluate_perplexity(p, {}), PreconditionError);
}

TEST(Buckets, CoverEveryExampleWithinBudget) {
  auto examples = CopyExamples(300, 3, 12);
  examples.push_back({std::vector<int>(40, 5), std::vector<int>(40, 5)});
  auto buckets = MakeBuckets(examples, 60);
  std::vector<int> seen(examples.size(), 0);
  for (const auto& b : buckets) {
    std::size_t mj = 0, mi = 0;
    for (auto k : b) {
      ++seen[k];
      mj = std::max(mj, examples[k].src.size() + 1);
      mi = std::max(mi, examples[k].tgt.size() + 1);
    }
    if (b.size() > 1) EXPECT_LE(b.size() * (mj + mi), 60u);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
}

TEST(Trainer, CopyTaskLossHalves) {
  RunConfig c = SmallRun();
  auto train = CopyExamples(200, 7, 12);
  Trainer trainer(c, c.Model(12, 12), train, {});
  std::vector<std::size_t> all(train.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
  const auto batch = GatherBatch(train, all);
  auto eval_loss = [&] {
    NoGradGuard guard;
    auto l = joint_loss(trainer.params(), batch);
    return double(l.total.item()) / double(batch.TokenCount());
  };
  const double initial = eval_loss();
  for (int s = 0; s < 200; ++s) trainer.Step();
  EXPECT_LT(eval_loss(), 0.5 * initial);
}

TEST(Trainer, SameSeedSameTrajectoryWithDropout) {
  RunConfig c = SmallRun();
  c.dropout = 0.3;
  auto train = CopyExamples(40, 8, 10);
  Trainer a(c, c.Model(10, 10), train, {}), b(c, c.Model(10, 10), train, {});
  for (int s = 0; s < 5; ++s) EXPECT_EQ(a.Step(), b.Step());
  EXPECT_EQ(Flatten(a.params()), Flatten(b.params()));
}

TEST(Trainer, CheckpointRoundTripIsBitwise) {
  RunConfig c = SmallRun();
  c.dropout = 0.2;
  c.l2_2dlstm = 0.05;
  auto train = CopyExamples(60, 9, 10);
  auto dev = CopyExamples(10, 10, 10);
  Trainer straight(c, c.Model(10, 10), train, dev);
  for (int s = 0; s < 4; ++s) straight.Step();
  straight.Checkpoint();
  const auto path = (fs::temp_directory_path() / "twoway_roundtrip.ckpt").string();
  straight.Save(path);
  for (int s = 0; s < 3; ++s) straight.Step();

  Trainer resumed(c, c.Model(10, 10), train, dev);
  resumed.Load(path);
  EXPECT_EQ(resumed.step(), 4u);
  for (int s = 0; s < 3; ++s) resumed.Step();
  EXPECT_EQ(Flatten(resumed.params()), Flatten(straight.params()));
  EXPECT_EQ(resumed.lr(), straight.lr());
  EXPECT_EQ(resumed.optimizer().m, straight.optimizer().m);
  EXPECT_EQ(resumed.optimizer().v, straight.optimizer().v);
  EXPECT_EQ(resumed.schedule().best, straight.schedule().best);
  fs::remove(path);
}

TEST(Trainer, LoadRejectsOtherShapes) {
  RunConfig c = SmallRun();
  auto train = CopyExamples(10, 11, 10);
  Trainer a(c, c.Model(10, 10), train, {});
  Trainer b(c, c.Model(11, 10), train, {});
  EXPECT_THROW(b.Load(a.Save()), DigestError);
  EXPECT_THROW(LoadParams(a.Save(), c.Model(10, 12)), DigestError);
}

TEST(Trainer, TiedEncodersStayTiedThroughTrainingAndCheckpoints) {
  RunConfig c = SmallRun();
  c.tie_encoders = true;
  auto train = CopyExamples(40, 14, 10);
  auto dev = CopyExamples(5, 15, 10);
  Trainer straight(c, c.Model(10, 10), train, dev);
  for (int s = 0; s < 3; ++s) straight.Step();
  const auto saved = straight.Save();
  for (int s = 0; s < 3; ++s) straight.Step();
  auto& p = straight.params();
  EXPECT_EQ(p.src_encoder.layers[0].w1.data().data(), p.tgt_encoder.layers[0].w1.data().data());

  Trainer resumed(c, c.Model(10, 10), train, dev);
  resumed.Load(saved);
  for (int s = 0; s < 3; ++s) resumed.Step();
  EXPECT_EQ(Flatten(resumed.params()), Flatten(straight.params()));
  auto& r = resumed.params();
  EXPECT_EQ(r.src_encoder.layers[0].w1.data().data(), r.tgt_encoder.layers[0].w1.data().data());

  auto loaded = LoadParams(saved, c.Model(10, 10));
  EXPECT_EQ(loaded.src_encoder.final_gain.data().data(),
            loaded.tgt_encoder.final_gain.data().data());
  RunConfig untied = c;
  untied.tie_encoders = false;
  Trainer other(untied, untied.Model(10, 10), train, dev);
  EXPECT_THROW(other.Load(saved), DigestError);
}

TEST(Trainer, LogLines) {
  EXPECT_EQ(LogCsvHeader(), "step,lr,train_loss,ppl_fwd,ppl_bwd,decay_events");
  RunConfig c = SmallRun();
  c.steps = 4;
  c.checkpoint_every = 2;
  auto train = CopyExamples(20, 12, 10);
  Trainer t(c, c.Model(10, 10), train, CopyExamples(5, 13, 10));
  std::ostringstream log;
  t.Run(&log, "");
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    ++count;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5) << line;
  }
  EXPECT_EQ(count, 2);
  EXPECT_EQ(log.str().rfind("2,", 0), 0u);
}

// One pair memorized by a tiny model: perplexity near one, greedy and beam
// decoding reproduce it in both directions.
TEST(Overfit, SinglePairIsMemorized) {
  RunConfig c = SmallRun();
  c.lr = 0.01;
  c.clip = 0.0;
  const Example pair{{4, 7, 5, 9}, {8, 6, 6}};
  Trainer t(c, c.Model(11, 11), {pair}, {});
  for (int s = 0; s < 500; ++s) t.Step();
  auto ppl = evaluate_perplexity(t.params(), {pair});
  EXPECT_LT(ppl.fwd, 1.1);
  EXPECT_LT(ppl.bwd, 1.1);

  auto fwd = decode_forward(t.params(), pair.src, BeamConfig{1, 0, 0.0});
  auto bwd = decode_backward(t.params(), pair.tgt, BeamConfig{1, 0, 0.0});
  EXPECT_EQ(fwd.tokens, pair.tgt);
  EXPECT_EQ(bwd.tokens, pair.src);
  auto [pt, ps] = teacher_forced_distributions(t.params(), std::vector<int>{1, 4, 7, 5, 9, 2},
                                               std::vector<int>{1, 8, 6, 6, 2});
  for (std::size_t i = 0; i + 1 < 5; ++i) {
    const int gold = std::vector<int>{8, 6, 6, 2}[i];
    std::size_t best = 0;
    for (std::size_t v = 0; v < 11; ++v) best = pt.at(i, v) > pt.at(i, best) ? v : best;
    EXPECT_EQ(int(best), gold);
  }
  EXPECT_EQ(decode_forward(t.params(), pair.src, BeamConfig{12, 0, 0.6}).tokens, pair.tgt);
  EXPECT_EQ(decode_backward(t.params(), pair.tgt, BeamConfig{12, 0, 0.6}).tokens, pair.src);
}

}  // namespace
}  // namespace twoway
