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

#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <set>
#include <sstream>

#include "parnet/builder.hpp"
#include "parnet/executor.hpp"
#include "parnet/reparam.hpp"
#include "test_util.hpp"

namespace parnet {
namespace {

using testing::random_tensor;

ModelGraph small(Variant v, std::uint64_t seed, std::int64_t res = 64) {
  ModelConfig c = ModelConfig::named(v);
  c.height = c.width = res;
  return init_weights(build_model(c), seed, InitStyle::kRandomized);
}

std::set<std::pair<std::string, std::string>> channel_names(const ModelGraph& g, const ExecPlan& p) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& c : p.channels) out.insert({g.node(c.producer).name, g.node(c.consumer).name});
  return out;
}

TEST(PlanTest, SingleWorker) {
  const ModelGraph g = build_model(ModelConfig::named(Variant::kS));
  const ExecPlan p = plan_execution(g, 1);
  EXPECT_TRUE(p.channels.empty());
  for (int w : p.assignment) EXPECT_EQ(w, 0);
  EXPECT_THROW(plan_execution(g, 0), ExecutionError);
}

TEST(PlanTest, ThreeWorkersOnS) {
  const ModelGraph g = build_model(ModelConfig::named(Variant::kS));
  const ExecPlan p = plan_execution(g, 3);
  EXPECT_NO_THROW(p.validate(g));
  const std::set<std::pair<std::string, std::string>> want = {{"stem.down2", "stem.down3"},
                                                               {"stem.down3", "stem.down4"},
                                                               {"stream1.down", "fusion2"},
                                                               {"fusion2", "fusion3"}};
  EXPECT_EQ(channel_names(g, p), want);
  ASSERT_EQ(p.assignment.size(), g.nodes.size());
  for (const auto& n : g.nodes) {
    const int w = p.assignment[static_cast<size_t>(n.id)];
    if (n.name == "stem.down1" || n.name == "stem.down2") EXPECT_EQ(w, 0);
    if (n.name == "stem.down3" || n.name == "fusion2") EXPECT_EQ(w, 1);
    if (n.name == "stem.down4" || n.name == "fusion3" || n.name == "tail.down" || n.name == "head") EXPECT_EQ(w, 2);
    if (n.role == NodeRole::kStream) EXPECT_EQ(w, n.stream - 1) << n.name;
  }
}

TEST(PlanTest, RoundRobinAndValidation) {
  const ModelGraph g = build_model(ModelConfig::named(Variant::kS));
  const ExecPlan two = plan_execution(g, 2);
  EXPECT_NO_THROW(two.validate(g));
  for (const auto& n : g.nodes) {
    if (n.role == NodeRole::kStream) EXPECT_EQ(two.assignment[static_cast<size_t>(n.id)], (n.stream - 1) % 2);
  }
  ExecPlan broken = plan_execution(g, 3);
  broken.channels.pop_back();
  EXPECT_THROW(broken.validate(g), ExecutionError);
  broken = plan_execution(g, 3);
  broken.assignment.pop_back();
  EXPECT_THROW(broken.validate(g), ExecutionError);
  broken = plan_execution(g, 3);
  broken.channels.push_back({0, 1, 0, 0});
  EXPECT_THROW(broken.validate(g), ExecutionError);
}

TEST(SequentialTest, DeterministicAndZeroNetwork) {
  const ModelGraph g = small(Variant::kS, 1);
  const Tensor x = random_tensor(Shape{2, 3, 64, 64}, 2);
  EXPECT_TRUE(bit_identical(run_sequential(g, x), run_sequential(g, x)));

  ModelGraph zero = build_model(g.config);
  for (auto& n : zero.nodes) n.weights = make_block_weights(n.spec);
  for (std::int64_t k = 0; k < 1000; ++k) (*zero.nodes.back().weights->fc_bias)[k] = 0.001f * static_cast<float>(k);
  const Tensor y = run_sequential(zero, x);
  for (std::int64_t k = 0; k < 1000; ++k) EXPECT_EQ(y[1000 + k], 0.001f * static_cast<float>(k));
}

TEST(SequentialTest, HandTrace) {
  ModelGraph g;
  g.nodes.push_back({0, "down", {BlockKind::kDownsampling, 3, 4, 2, 1}, NodeRole::kStem, 0, 1, {}, std::nullopt});
  g.nodes.push_back({1, "head", {BlockKind::kFinalHead, 4, 2, 1, 1}, NodeRole::kTail, 0, 1, {0}, std::nullopt});
  g.output = 1;
  g = init_weights(g, 3, InitStyle::kRandomized);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, 4);
  const Tensor want = final_head_forward(downsampling_forward(x, *g.nodes[0].weights, g.nodes[0].spec), *g.nodes[1].weights);
  EXPECT_TRUE(bit_identical(run_sequential(g, x), want));
  EXPECT_THROW(run_sequential(g, Tensor(Shape{1, 4, 8, 8})), ShapeError);
}

TEST(ParallelTest, BitIdenticalOnS) {
  const ModelGraph g = small(Variant::kS, 5);
  const Tensor x = random_tensor(Shape{4, 3, 64, 64}, 6);
  const Tensor ref = run_sequential(g, x);
  for (int w = 1; w <= 4; ++w) EXPECT_TRUE(bit_identical(run_parallel(g, plan_execution(g, w), x), ref)) << w;
  const ModelGraph f = fuse_model(g);
  EXPECT_TRUE(bit_identical(run_parallel(f, plan_execution(f, 3), x), run_sequential(f, x)));
}

TEST(ParallelTest, JitterDoesNotChangeResult) {
  const ModelGraph g = init_weights(build_model(toy_config()), 7, InitStyle::kRandomized);
  const Tensor x = random_tensor(Shape{2, 3, 32, 32}, 8);
  const Tensor ref = run_sequential(g, x);
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    ParallelOptions o;
    o.jitter_seed = seed;
    o.jitter_max_us = 300;
    EXPECT_TRUE(bit_identical(run_parallel(g, plan_execution(g, 1 + static_cast<int>(seed % 4)), x, o), ref)) << seed;
  }
}

TEST(ParallelTest, TerminatesForEveryWorkerCount) {
  const ModelGraph g = init_weights(build_model(toy_config()), 9);
  const Tensor x = random_tensor(Shape{1, 3, 32, 32}, 10);
  auto run = std::async(std::launch::async, [&] {
    for (int w = 1; w <= 8; ++w) run_parallel(g, plan_execution(g, w), x);
  });
  ASSERT_EQ(run.wait_for(std::chrono::seconds(60)), std::future_status::ready);
  run.get();
}

TEST(ParallelTest, TimeoutNamesEdge) {
  const ModelGraph g = init_weights(build_model(toy_config()), 9);
  ParallelOptions o;
  o.receive_timeout = std::chrono::milliseconds(1);
  o.jitter_seed = 3;
  o.jitter_max_us = 50000;
  try {
    run_parallel(g, plan_execution(g, 3), random_tensor(Shape{1, 3, 32, 32}, 1), o);
    FAIL() << "expected a timeout";
  } catch (const ExecutionError& e) {
    EXPECT_NE(std::string(e.what()).find("->"), std::string::npos) << e.what();
  }
}

TEST(ParallelTest, RejectsInvalidPlan) {
  const ModelGraph g = init_weights(build_model(toy_config()), 9);
  ExecPlan p = plan_execution(g, 3);
  p.channels.clear();
  EXPECT_THROW(run_parallel(g, p, random_tensor(Shape{1, 3, 32, 32}, 1)), ExecutionError);
}

TEST(BenchmarkTest, ReportAndCsv) {
  const ModelGraph g = init_weights(build_model(toy_config()), 1);
  const BenchReport seq = benchmark(g, plan_execution(g, 1), 2, 5, 1);
  EXPECT_EQ(seq.mode, "sequential");
  EXPECT_FALSE(seq.fused);
  EXPECT_EQ(seq.batch, 2);
  EXPECT_EQ(seq.iterations, 5);
  EXPECT_LE(seq.p50_ms, seq.p95_ms);
  EXPECT_NEAR(seq.throughput_sps, 2 * 1000.0 / seq.mean_ms, 0.1 * seq.throughput_sps);
  const ModelGraph f = fuse_model(g);
  const BenchReport par = benchmark(f, plan_execution(f, 3), 2, 3, 0);
  EXPECT_EQ(par.mode, "parallel-3");
  EXPECT_TRUE(par.fused);
  EXPECT_EQ(bench_csv_header(), "mode,fused,batch,iters,p50_ms,p95_ms,mean_ms,throughput_sps");
  std::stringstream row(bench_csv_row(par));
  std::string field;
  std::vector<std::string> fields;
  while (std::getline(row, field, ',')) fields.push_back(field);
  ASSERT_EQ(fields.size(), 8u);
  EXPECT_EQ(fields[0], "parallel-3");
  EXPECT_EQ(fields[1], "1");
  EXPECT_EQ(fields[3], "3");
  EXPECT_THROW(benchmark(g, plan_execution(g, 1), 1, 0), ExecutionError);
}

}  // namespace
}  // namespace parnet
