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

#include "nvf/parallel.h"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace nvf {
namespace {

// Chunked work sharing. Chunk dispatch runs under the mutex: chunks are
// coarse (at most a few dozen per job), so contention is irrelevant, and a
// stale worker can never touch a newer job's state.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { WorkerLoop(); });
    }
  }

  ~ThreadPool() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void Run(int64_t n, int64_t grain,
           const std::function<void(int64_t, int64_t)>& fn) {
    uint64_t gen;
    {
      std::unique_lock<std::mutex> lock(mu_);
      job_fn_ = &fn;
      job_n_ = n;
      job_grain_ = grain;
      next_ = 0;
      pending_ = (n + grain - 1) / grain;
      gen = ++generation_;
    }
    cv_.notify_all();
    DrainChunks(gen);
    std::unique_lock<std::mutex> lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  void DrainChunks(uint64_t my_gen) {
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn;
      int64_t begin, end;
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (generation_ != my_gen || job_fn_ == nullptr || next_ >= job_n_) {
          return;
        }
        begin = next_;
        end = std::min(job_n_, begin + job_grain_);
        next_ = end;
        fn = job_fn_;
      }
      (*fn)(begin, end);
      {
        std::unique_lock<std::mutex> lock(mu_);
        if (generation_ == my_gen && --pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  void WorkerLoop() {
    uint64_t seen = 0;
    for (;;) {
      uint64_t gen;
      {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = gen = generation_;
      }
      DrainChunks(gen);
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0;
  int64_t job_grain_ = 1;
  int64_t next_ = 0;
  int64_t pending_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

int DetectThreads() {
  if (const char* env = std::getenv("NVF_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace

int NumThreads() {
  static const int n = DetectThreads();
  return n;
}

void ParallelFor(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = NumThreads();
  if (workers <= 1 || n < 2) {
    fn(0, n);
    return;
  }
  // Pool threads are in addition to the caller, so create workers - 1.
  // Callers pass coarse units (output slabs, grid lines), so small n still
  // splits.
  static ThreadPool* pool = new ThreadPool(NumThreads() - 1);
  const int64_t grain = std::max<int64_t>(1, n / (8 * workers));
  pool->Run(n, grain, fn);
}

}  // namespace nvf
