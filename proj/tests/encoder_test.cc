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

#include <cmath>
#include <vector>

#include "fd.h"
#include "twoway/encoder.h"
#include "twoway/ops.h"
#include "twoway/rng.h"

namespace twoway {
namespace {

EncoderConfig SmallConfig(std::size_t layers = 2) {
  EncoderConfig c;
  c.vocab = 11;
  c.d_model = 8;
  c.d_ff = 12;
  c.heads = 2;
  c.layers = layers;
  c.max_positions = 32;
  return c;
}

std::vector<int> RandomIds(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<int> ids{1};
  for (std::size_t k = 1; k < n; ++k) ids.push_back(int(rng.uniform_int(4, vocab - 1)));
  return ids;
}

TEST(Encoder, BosAloneGivesOneState) {
  Rng rng(1);
  auto params = EncoderParams<double>::Init(SmallConfig(), rng);
  const std::vector<int> bos{1};
  auto enc = encode(params, bos);
  EXPECT_EQ(enc.states.shape(), (Shape{1, 8}));
  EXPECT_EQ(enc.mask.size(), 1u);
}

TEST(Encoder, OutputShapeForEveryLength) {
  Rng rng(2);
  auto params = EncoderParams<double>::Init(SmallConfig(), rng);
  for (std::size_t n = 1; n <= 9; ++n) {
    auto enc = encode(params, RandomIds(rng, n, 11));
    EXPECT_EQ(enc.states.shape(), (Shape{n, 8}));
  }
}

TEST(Encoder, PerturbingLastTokenLeavesEarlierStatesBitwise) {
  Rng rng(3);
  auto params = EncoderParams<double>::Init(SmallConfig(), rng);
  std::vector<int> ids{1, 5, 6, 7, 8};
  auto a = encode(params, ids);
  ids[4] = 9;
  auto b = encode(params, ids);
  for (std::size_t k = 0; k < 4 * 8; ++k) EXPECT_EQ(a.states[k], b.states[k]);
  bool changed = false;
  for (std::size_t k = 4 * 8; k < 5 * 8; ++k) changed |= a.states[k] != b.states[k];
  EXPECT_TRUE(changed);
}

TEST(Encoder, CausalityForRandomModelsAndPositions) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto params = EncoderParams<double>::Init(SmallConfig(), rng);
    auto ids = RandomIds(rng, 8, 11);
    auto base = encode(params, ids);
    const std::size_t t = std::size_t(rng.uniform_int(1, 7));
    for (std::size_t k = t; k < ids.size(); ++k) ids[k] = int(rng.uniform_int(4, 10));
    auto changed = encode(params, ids);
    for (std::size_t k = 0; k < t * 8; ++k) ASSERT_EQ(base.states[k], changed.states[k]);
  }
}

TEST(Encoder, ZeroParamsGivePositionalBaseline) {
  const auto config = SmallConfig();
  auto params = EncoderParams<double>::Zeros(config);
  // Oracle: with every weight zero the residual stream is the positional
  // row, so the output is its layer norm.
  auto pos = SinusoidalPositions(config.max_positions, config.d_model);
  auto a = encode(params, std::vector<int>{1, 4, 5, 6});
  auto b = encode(params, std::vector<int>{1, 9, 10, 7});
  for (std::size_t t = 0; t < 4; ++t) {
    double mean = 0.0, var = 0.0;
    for (std::size_t k = 0; k < 8; ++k) mean += pos.at(t, k) / 8;
    for (std::size_t k = 0; k < 8; ++k) var += (pos.at(t, k) - mean) * (pos.at(t, k) - mean) / 8;
    for (std::size_t k = 0; k < 8; ++k) {
      const double expected = (pos.at(t, k) - mean) / std::sqrt(var + 1e-5);
      EXPECT_NEAR(a.states.at(t, k), expected, 1e-12);
      EXPECT_EQ(a.states.at(t, k), b.states.at(t, k));
    }
  }
}

TEST(Encoder, OutOfVocabularyIsIndexError) {
  Rng rng(5);
  auto params = EncoderParams<double>::Init(SmallConfig(), rng);
  EXPECT_THROW(encode(params, std::vector<int>{1, 11}), IndexError);
  EXPECT_THROW(encode(params, std::vector<int>{1, -1}), IndexError);
}

TEST(Encoder, EmbeddingsOnlyVariant) {
  Rng rng(6);
  auto params = EncoderParams<double>::Init(SmallConfig(0), rng);
  auto enc = encode(params, std::vector<int>{1, 4, 4});
  EXPECT_EQ(enc.states.shape(), (Shape{3, 8}));
}

TEST(Encoder, PaddingNeverReachesRealPositions) {
  Rng rng(7);
  auto params = EncoderParams<double>::Init(SmallConfig(), rng);
  const std::vector<int> alone{1, 5, 6};
  const std::vector<int> padded{1, 5, 6, 2, 0, 0, 1, 7, 8, 9, 2, 0};
  auto single = encode(params, alone);
  auto batch = EncodeBatch(params, std::span<const int>(padded), 2, 6);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(batch.at(t, k), single.states.at(t, k), 1e-12);
  }
}

TEST(Attention, SinglePositionWeightIsOne) {
  Rng rng(8);
  auto q = testing::RandomTensor({1, 8}, rng);
  std::vector<double> w;
  causal_attention(q, q, q, 2, 1, 0.0, nullptr, &w);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_EQ(w[0], 1.0);
  EXPECT_EQ(w[1], 1.0);
}

TEST(Attention, UniformScoresSpreadOverPrefix) {
  Rng rng(9);
  Tensor<double> q({5, 8});  // zero queries give equal scores
  auto k = testing::RandomTensor({5, 8}, rng);
  auto v = testing::RandomTensor({5, 8}, rng);
  std::vector<double> w;
  causal_attention(q, k, v, 2, 1, 0.0, nullptr, &w);
  ASSERT_EQ(w.size(), 2u * 5 * 5);
  for (std::size_t h = 0; h < 2; ++h) {
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t u = 0; u < 5; ++u) {
        const double expected = u <= t ? 1.0 / double(t + 1) : 0.0;
        EXPECT_NEAR(w[(h * 5 + t) * 5 + u], expected, 1e-15);
      }
    }
  }
}

TEST(Attention, MaskedWeightsExactlyZeroAndRowsNormalized) {
  Rng rng(10);
  auto q = testing::RandomTensor({4, 8}, rng, -2, 2);
  auto k = testing::RandomTensor({4, 8}, rng, -2, 2);
  auto v = testing::RandomTensor({4, 8}, rng, -2, 2);
  std::vector<double> w;
  causal_attention(q, k, v, 4, 1, 0.0, nullptr, &w);
  for (std::size_t h = 0; h < 4; ++h) {
    for (std::size_t t = 0; t < 4; ++t) {
      double total = 0.0;
      for (std::size_t u = 0; u < 4; ++u) {
        const double x = w[(h * 4 + t) * 4 + u];
        if (u > t) EXPECT_EQ(x, 0.0);
        EXPECT_GE(x, 0.0);
        total += x;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Attention, IndivisibleHeadsRejected) {
  Tensor<double> q({3, 8});
  EXPECT_THROW(causal_attention(q, q, q, 3), DimensionError);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  auto q = testing::RandomTensor({6, 4}, rng);
  auto k = testing::RandomTensor({6, 4}, rng);
  auto v = testing::RandomTensor({6, 4}, rng);
  EXPECT_LT(testing::WorstGradError(
                {&q, &k, &v}, [&] { return testing::Probe(causal_attention(q, k, v, 2, 2)); }),
            1e-4);
}

}  // namespace
}  // namespace twoway
