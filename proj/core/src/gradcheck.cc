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

#include "twoway/gradcheck.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "twoway/ops.h"
#include "twoway/training.h"

namespace twoway {

ModelConfig GradCheckOptions::TinyModel() {
  ModelConfig m;
  m.src_vocab = 7;
  m.tgt_vocab = 8;
  m.d_model = 8;
  m.d_ff = 12;
  m.heads = 2;
  m.layers = 1;
  m.d_cell = 4;
  m.max_positions = 16;
  return m;
}

std::vector<std::string> GradCheckGroups() {
  std::vector<std::string> groups{"src_encoder", "tgt_encoder"};
  for (std::size_t g = 0; g < kNumGates; ++g) {
    groups.push_back(std::string("gate.") + GateName(static_cast<Gate>(g)));
  }
  groups.push_back("out_tgt");
  groups.push_back("out_src");
  return groups;
}

GradCheckReport RunGradCheck(const GradCheckOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(options.seed);
  auto params = BidirModelParams<double>::Init(options.model, rng);
  // Non-zero biases and gains so their gradients are exercised away from
  // the symmetric starting point.
  for (auto& [name, t] : params.Named()) {
    for (auto& v : t->mutable_data()) v += rng.uniform(-0.1, 0.1);
  }
  auto random_ids = [&rng](std::size_t n, std::size_t vocab) {
    std::vector<int> ids;
    for (std::size_t k = 0; k < n; ++k) {
      ids.push_back(static_cast<int>(rng.uniform_int(kNumReserved, std::int64_t(vocab) - 1)));
    }
    return ids;
  };
  const BidirBatch batch = MakeBatch({random_ids(options.src_len, options.model.src_vocab)},
                                     {random_ids(options.tgt_len, options.model.tgt_vocab)});
  auto loss_of = [&]() {
    auto loss = joint_loss(params, batch);
    Tensor<double> total = scale(loss.total, 1.0 / double(batch.TokenCount()));
    return apply_regularization(total, params.grid, options.l2);
  };

  auto named = params.Named();
  for (auto& [name, t] : named) t->set_requires_grad(true);
  backward(loss_of());
  std::vector<std::vector<double>> analytic;
  for (auto& [name, t] : named) {
    std::vector<double> g(t->numel(), 0.0);
    if (t->has_grad()) std::copy(t->grad().begin(), t->grad().end(), g.begin());
    if (options.corrupt) options.corrupt(name, g);
    analytic.push_back(std::move(g));
  }

  std::map<std::string, GroupResult> groups;
  for (const auto& g : GradCheckGroups()) groups[g].group = g;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < named.size(); ++k) {
    auto& [name, t] = named[k];
    auto values = t->mutable_data();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double saved = values[e];
      values[e] = saved + options.eps;
      const double plus = loss_of().item();
      values[e] = saved - options.eps;
      const double minus = loss_of().item();
      values[e] = saved;
      const double numeric = (plus - minus) / (2 * options.eps);
      const double a = analytic[k][e];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      auto& result = groups[ParameterGroup(name, e, options.model.d_cell)];
      ++result.checked;
      if (result.checked == 1 || rel > result.worst) {
        result.worst = rel;
        result.worst_at = name + "[" + std::to_string(e) + "]";
      }
    }
  }

  GradCheckReport report;
  for (const auto& g : GradCheckGroups()) {
    report.groups.push_back(groups[g]);
    report.worst = std::max(report.worst, groups[g].worst);
  }
  report.passed = report.worst <= options.tolerance;
  for (const auto& g : report.groups) report.passed = report.passed && g.checked > 0;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace twoway
