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

#include "parnet/executor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace parnet {

void ExecPlan::validate(const ModelGraph& g) const {
  if (worker_count < 1) throw ExecutionError("plan has no workers");
  if (assignment.size() != g.nodes.size()) throw ExecutionError("plan does not assign every node");
  for (int w : assignment) {
    if (w < 0 || w >= worker_count) throw ExecutionError("plan assigns a node to a missing worker");
  }
  size_t cross = 0;
  for (const auto& [src, dst] : g.edges()) {
    if (assignment[static_cast<size_t>(src)] == assignment[static_cast<size_t>(dst)]) continue;
    ++cross;
    const bool found = std::any_of(channels.begin(), channels.end(), [&](const ChannelSpec& c) {
      return c.producer == src && c.consumer == dst;
    });
    if (!found) throw ExecutionError("plan lacks a channel for " + g.node(src).name + "->" + g.node(dst).name);
  }
  if (cross != channels.size()) throw ExecutionError("plan lists channels that are not cross-worker edges");
}

ExecPlan plan_execution(const ModelGraph& g, int workers) {
  if (workers < 1) throw ExecutionError("workers must be >= 1, got " + std::to_string(workers));
  ExecPlan plan;
  plan.worker_count = workers;
  for (const auto& n : g.nodes) plan.assignment.push_back((n.lane - 1) % workers);
  for (const auto& [src, dst] : g.edges()) {
    const int a = plan.assignment[static_cast<size_t>(src)], b = plan.assignment[static_cast<size_t>(dst)];
    if (a != b) plan.channels.push_back({src, dst, a, b});
  }
  return plan;
}

namespace {

Tensor eval_node(const Node& n, const Tensor& a, const Tensor* b) {
  if (!n.weights) throw ExecutionError("node " + n.name + " has no weights");
  return block_forward(n.spec, *n.weights, a, b);
}

void check_input(const ModelGraph& g, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("network input must be [n, 3, h, w], got " + x.shape().str());
  if (g.output < 0) throw GraphError("graph has no output node");
}

// Bounded blocking queue shared by exactly one producer and one consumer.
class Channel {
 public:
  explicit Channel(size_t capacity) : capacity_(capacity) {}

  // Returns false if aborted while waiting for space.
  bool send(Tensor t, const std::atomic<bool>& abort) {
    std::unique_lock lock(mu_);
    while (queue_.size() >= capacity_) {
      if (abort) return false;
      cv_.wait_for(lock, std::chrono::milliseconds(10));
    }
    queue_.push_back(std::move(t));
    cv_.notify_all();
    return true;
  }

  // Empty optional on timeout or abort.
  std::optional<Tensor> receive(std::chrono::milliseconds timeout, const std::atomic<bool>& abort) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::unique_lock lock(mu_);
    while (queue_.empty()) {
      if (abort || std::chrono::steady_clock::now() >= deadline) return std::nullopt;
      cv_.wait_for(lock, std::chrono::milliseconds(10));
    }
    Tensor t = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return t;
  }

 private:
  size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Tensor> queue_;
};

constexpr size_t kChannelCapacity = 2;

}  // namespace

Tensor run_sequential(const ModelGraph& g, const Tensor& x) {
  check_input(g, x);
  std::vector<std::optional<Tensor>> values(g.nodes.size());
  for (int id : g.topological_order()) {
    const Node& n = g.node(id);
    const Tensor& a = n.inputs.empty() ? x : *values[static_cast<size_t>(n.inputs[0])];
    const Tensor* b = n.inputs.size() > 1 ? &*values[static_cast<size_t>(n.inputs[1])] : nullptr;
    values[static_cast<size_t>(id)] = eval_node(n, a, b);
  }
  return std::move(*values[static_cast<size_t>(g.output)]);
}

Tensor run_parallel(const ModelGraph& g, const ExecPlan& plan, const Tensor& x, const ParallelOptions& opts) {
  check_input(g, x);
  plan.validate(g);
  if (plan.worker_count == 1) return run_sequential(g, x);

  const auto order = g.topological_order();
  std::vector<std::unique_ptr<Channel>> channels;
  for (size_t i = 0; i < plan.channels.size(); ++i) channels.push_back(std::make_unique<Channel>(kChannelCapacity));
  auto channel_of = [&](int src, int dst) -> size_t {
    for (size_t i = 0; i < plan.channels.size(); ++i) {
      if (plan.channels[i].producer == src && plan.channels[i].consumer == dst) return i;
    }
    throw ExecutionError("no channel " + g.node(src).name + "->" + g.node(dst).name);
  };
  const auto succ = g.successors();

  std::atomic<bool> abort{false};
  std::mutex err_mu;
  std::exception_ptr first_error;
  std::optional<Tensor> result;

  auto worker = [&](int me) {
    try {
      std::mt19937_64 rng(opts.jitter_seed * 1315423911ULL + static_cast<std::uint64_t>(me));
      std::uniform_int_distribution<int> jitter(0, std::max(opts.jitter_max_us, 0));
      auto maybe_sleep = [&] {
        if (opts.jitter_max_us > 0) std::this_thread::sleep_for(std::chrono::microseconds(jitter(rng)));
      };
      std::vector<std::optional<Tensor>> local(g.nodes.size());
      auto fetch = [&](int src, int dst) -> const Tensor& {
        auto& slot = local[static_cast<size_t>(src)];
        if (plan.assignment[static_cast<size_t>(src)] != me && !slot) {
          slot = channels[channel_of(src, dst)]->receive(opts.receive_timeout, abort);
          if (!slot) {
            if (abort) throw ExecutionError("aborted");
            throw ExecutionError("timed out waiting on channel " + g.node(src).name + "->" + g.node(dst).name);
          }
        }
        return *slot;
      };
      for (int id : order) {
        if (plan.assignment[static_cast<size_t>(id)] != me) continue;
        if (abort) return;
        const Node& n = g.node(id);
        const Tensor* a = n.inputs.empty() ? &x : &fetch(n.inputs[0], id);
        const Tensor* b = n.inputs.size() > 1 ? &fetch(n.inputs[1], id) : nullptr;
        maybe_sleep();
        Tensor y = eval_node(n, *a, b);
        for (int dst : succ[static_cast<size_t>(id)]) {
          if (plan.assignment[static_cast<size_t>(dst)] == me) continue;
          maybe_sleep();
          if (!channels[channel_of(id, dst)]->send(y, abort)) return;
        }
        if (id == g.output) result = y;
        local[static_cast<size_t>(id)] = std::move(y);
      }
    } catch (...) {
      std::lock_guard lock(err_mu);
      if (!first_error) first_error = std::current_exception();
      abort = true;
    }
  };

  std::vector<std::thread> threads;
  for (int w = 0; w < plan.worker_count; ++w) threads.emplace_back(worker, w);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  if (!result) throw ExecutionError("output node produced no value");
  return std::move(*result);
}

BenchReport benchmark(const ModelGraph& g, const ExecPlan& plan, std::int64_t batch, int iters, int warmup,
                      std::uint64_t seed) {
  if (iters < 1) throw ExecutionError("benchmark needs iters >= 1");
  if (batch < 1) throw ExecutionError("benchmark needs batch >= 1");
  Tensor x(Shape{batch, 3, g.config.height, g.config.width});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  for (auto& v : x.data()) v = d(rng);

  const bool sequential = plan.worker_count == 1;
  auto run = [&] { return sequential ? run_sequential(g, x) : run_parallel(g, plan, x); };
  for (int i = 0; i < warmup; ++i) run();

  using clock = std::chrono::steady_clock;
  std::vector<double> ms;
  ms.reserve(static_cast<size_t>(iters));
  const auto start = clock::now();
  for (int i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    run();
    ms.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
  }
  const double total_s = std::chrono::duration<double>(clock::now() - start).count();

  BenchReport r;
  r.batch = batch;
  r.iterations = iters;
  r.mode = sequential ? "sequential" : "parallel-" + std::to_string(plan.worker_count);
  r.fused = g.fused;
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / static_cast<double>(iters);
  std::sort(ms.begin(), ms.end());
  auto pct = [&ms](double q) {
    const auto idx = static_cast<size_t>(std::ceil(q * static_cast<double>(ms.size()))) - 1;
    return ms[std::min(idx, ms.size() - 1)];
  };
  r.p50_ms = pct(0.50);
  r.p95_ms = pct(0.95);
  r.throughput_sps = static_cast<double>(batch) * iters / total_s;
  return r;
}

std::string bench_csv_header() { return "mode,fused,batch,iters,p50_ms,p95_ms,mean_ms,throughput_sps"; }

std::string bench_csv_row(const BenchReport& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << r.mode << ',' << (r.fused ? 1 : 0) << ',' << r.batch << ',' << r.iterations << ',' << r.p50_ms << ','
     << r.p95_ms << ',' << r.mean_ms << ',' << r.throughput_sps;
  return os.str();
}

}  // namespace parnet
