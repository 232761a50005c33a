// Copyright (c) 2026 The ParNet Engine Authors. All Rights Reserved.
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

// Sequential and stream-parallel execution of a ModelGraph.
//
// Every worker evaluates its nodes in the graph's global topological order and
// exchanges activations by value over bounded per-edge channels. Node
// arithmetic is identical in both executors, so results match bit for bit.

#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <vector>

#include "parnet/graph.hpp"

namespace parnet {

class ExecutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelSpec {
  int producer = 0;  // node ids
  int consumer = 0;
  int from_worker = 0;  // 0-based
  int to_worker = 0;
};

struct ExecPlan {
  int worker_count = 1;
  std::vector<int> assignment;  // node id -> worker (0-based)
  std::vector<ChannelSpec> channels;

  /// Throws ExecutionError if the plan does not partition g or misses a cross-worker edge.
  void validate(const ModelGraph& g) const;
};

/// Lane l goes to worker (l - 1) mod workers. With one worker per stream this
/// puts the first stem levels on worker 1, each later stem level with the
/// stream it feeds, and each fusion with the stream it absorbs.
ExecPlan plan_execution(const ModelGraph& g, int workers);

Tensor run_sequential(const ModelGraph& g, const Tensor& x);

struct ParallelOptions {
  std::chrono::milliseconds receive_timeout{60000};
  /// Nonzero: each worker sleeps a random 0..jitter_max_us before every node and send.
  std::uint64_t jitter_seed = 0;
  int jitter_max_us = 0;
};

Tensor run_parallel(const ModelGraph& g, const ExecPlan& plan, const Tensor& x, const ParallelOptions& opts = {});

struct BenchReport {
  std::int64_t batch = 0;
  int iterations = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  double throughput_sps = 0.0;
  std::string mode;  // "sequential" or "parallel-<k>"
  bool fused = false;
};

/// Warmup then timed iterations on a fixed seeded input. A one-worker plan runs
/// the sequential executor.
BenchReport benchmark(const ModelGraph& g, const ExecPlan& plan, std::int64_t batch, int iters, int warmup = 10,
                      std::uint64_t seed = 0);

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace parnet
