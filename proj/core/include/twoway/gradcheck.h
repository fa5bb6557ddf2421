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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "twoway/model.h"

namespace twoway {

struct GradCheckOptions {
  ModelConfig model = TinyModel();
  std::size_t src_len = 3, tgt_len = 3;  // real tokens per side
  double eps = 1e-5;
  double tolerance = 1e-3;
  double l2 = 0.05;
  std::uint64_t seed = 7;
  // Called on each tensor's analytic gradient before comparison; lets tests
  // simulate a broken backward pass.
  std::function<void(const std::string& name, std::span<double> grad)> corrupt;

  static ModelConfig TinyModel();
};

struct GroupResult {
  std::string group;
  double worst = 0.0;  // worst relative error
  std::size_t checked = 0;
  std::string worst_at;  // tensor[index] of the worst entry
};

struct GradCheckReport {
  std::vector<GroupResult> groups;
  double worst = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

// Central differences on every parameter of a random 64-bit model against
// the taped gradient of the normalized, regularized joint loss. Relative
// error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport RunGradCheck(const GradCheckOptions& options = {});

// Groups reported by RunGradCheck, in order.
std::vector<std::string> GradCheckGroups();

}  // namespace twoway
