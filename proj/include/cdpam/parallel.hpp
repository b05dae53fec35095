// Copyright 2026 The CDPAM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <functional>

namespace cdpam {

// Worker count: hardware concurrency, capped by the CDPAM_THREADS variable.
int worker_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges, so
// results written by index do not depend on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Keeps large freed blocks in the heap instead of returning them to the OS
// (glibc only; no-op elsewhere). Training allocates the same tensor sizes
// every step, so this avoids repeated page faults. Idempotent.
void tune_allocator();

}  // namespace cdpam
