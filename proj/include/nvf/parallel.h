// Copyright (c) the nvf authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef NVF_PARALLEL_H_
#define NVF_PARALLEL_H_

#include <cstdint>
#include <functional>

namespace nvf {

// Runs fn(begin, end) over a partition of [0, n). Each invocation owns a
// disjoint index range, so results are identical for any thread count as long
// as ranges never overlap. Falls back to a direct call for small n.
void ParallelFor(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

// Thread count used by ParallelFor (>= 1). Overridable via NVF_THREADS.
int NumThreads();

}  // namespace nvf

#endif  // NVF_PARALLEL_H_
