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
#include <functional>

namespace twoway {

// Number of worker threads used by data-parallel kernels (default 1).
void SetNumWorkers(std::size_t workers);
std::size_t NumWorkers();

// Runs body(chunk) for chunk in [0, chunks). The chunking is chosen by the
// caller and never by the worker count, so results do not depend on it.
void ParallelFor(std::size_t chunks, const std::function<void(std::size_t)>& body);

}  // namespace twoway
