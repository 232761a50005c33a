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

#include <cmath>

#include "parnet/analysis.hpp"
#include "parnet/builder.hpp"
#include "parnet/config_io.hpp"
#include "parnet/executor.hpp"
#include "parnet/reparam.hpp"
#include "test_util.hpp"

namespace parnet {
namespace {

const Variant kNamed[] = {Variant::kS, Variant::kM, Variant::kL, Variant::kXL};

ModelGraph one_block_graph(BlockSpec spec) {
  ModelGraph g;
  g.config.height = g.config.width = 4;
  g.nodes.push_back({0, "only", spec, NodeRole::kStem, 0, 1, {}, std::nullopt});
  g.output = 0;
  return g;
}

TEST(BuilderTest, NamedWidths) {
  const std::vector<std::vector<std::int64_t>> widths = {{96, 192, 384}, {128, 256, 512}, {160, 320, 640}, {200, 400, 800}};
  const std::int64_t finals[] = {1280, 2048, 2560, 3200};
  for (int i = 0; i < 4; ++i) {
    const ModelGraph g = build_model(ModelConfig::named(kNamed[i]));
    for (const auto& n : g.nodes) {
      if (n.role == NodeRole::kStream && n.spec.kind == BlockKind::kRepVggSse) {
        EXPECT_EQ(n.spec.c_out, widths[static_cast<size_t>(i)][static_cast<size_t>(n.stream - 1)]) << n.name;
      }
    }
    EXPECT_EQ(g.node(g.output).spec.c_in, finals[i]);
    EXPECT_EQ(g.node(g.output).spec.c_out, 1000);
  }
}

TEST(BuilderTest, ImageNetTopology) {
  const ModelGraph g = build_model(ModelConfig::named(Variant::kS));
  std::map<std::string, const Node*> by;
  for (const auto& n : g.nodes) by[n.name] = &n;
  auto input_of = [&](const std::string& name, size_t k = 0) { return g.node(by.at(name)->inputs.at(k)).name; };
  EXPECT_EQ(input_of("stream1.0"), "stem.down2");
  EXPECT_EQ(input_of("stream2.0"), "stem.down3");
  EXPECT_EQ(input_of("stream3.0"), "stem.down4");
  EXPECT_EQ(input_of("stream1.down"), "stream1.3");
  EXPECT_EQ(input_of("fusion2", 0), "stream1.down");
  EXPECT_EQ(input_of("fusion2", 1), "stream2.4");
  EXPECT_EQ(input_of("fusion3", 0), "fusion2");
  EXPECT_EQ(input_of("fusion3", 1), "stream3.4");
  EXPECT_EQ(input_of("tail.down"), "fusion3");
  EXPECT_EQ(by.at("fusion2")->spec.stride, 2);
  EXPECT_EQ(by.at("fusion3")->spec.stride, 1);
  int rep = 0;
  for (const auto& n : g.nodes) {
    if (n.spec.kind != BlockKind::kRepVggSse) continue;
    ++rep;
    EXPECT_EQ(n.spec.c_in, n.spec.c_out);
  }
  EXPECT_EQ(rep, 14);
}

TEST(BuilderTest, DegreesAndStreamPartition) {
  for (auto v : kNamed) {
    const ModelGraph g = build_model(ModelConfig::named(v));
    EXPECT_EQ(g.config.num_streams, 3);
    int roots = 0;
    for (const auto& n : g.nodes) {
      const size_t want = n.spec.kind == BlockKind::kFusionBlock ? 2 : (n.inputs.empty() ? 0 : 1);
      EXPECT_EQ(n.inputs.size(), want) << n.name;
      roots += n.inputs.empty() ? 1 : 0;
    }
    EXPECT_EQ(roots, 1);
    for (auto [src, dst] : g.edges()) {
      const Node &a = g.node(src), &b = g.node(dst);
      if (a.role == NodeRole::kStream && !(b.role == NodeRole::kStream && b.stream == a.stream)) {
        EXPECT_EQ(b.spec.kind, BlockKind::kFusionBlock) << a.name << "->" << b.name;
      }
      if (b.role == NodeRole::kStream && a.role == NodeRole::kStream) EXPECT_EQ(a.stream, b.stream);
    }
  }
}

TEST(BuilderTest, DepthTwelveEverywhere) {
  for (auto v : kNamed) {
    const ModelGraph g = build_model(ModelConfig::named(v));
    EXPECT_EQ(compute_depth(g), 12);
    EXPECT_EQ(compute_depth(deployed_topology(g)), 12);
  }
  for (int i = 0; i < 3; ++i) EXPECT_EQ(compute_depth(build_model(cifar_config(i))), 12);
  EXPECT_EQ(compute_depth(build_model(toy_config())), 12);
}

TEST(BuilderTest, ShapesTypeCheck) {
  for (auto v : kNamed) {
    for (std::int64_t r : {224, 320}) {
      ModelConfig c = ModelConfig::named(v);
      c.height = c.width = r;
      const ModelGraph g = build_model(c);
      const auto shapes = infer_shapes(g, r, r);
      EXPECT_EQ(shapes[static_cast<size_t>(g.output)], (FeatureShape{1000, 1, 1}));
    }
  }
  const ModelGraph s = build_model(ModelConfig::named(Variant::kS));
  std::map<std::string, FeatureShape> by;
  const auto shapes = infer_shapes(s, 224, 224);
  for (const auto& n : s.nodes) by[n.name] = shapes[static_cast<size_t>(n.id)];
  EXPECT_EQ(by["stream1.3"], (FeatureShape{96, 56, 56}));
  EXPECT_EQ(by["fusion3"], (FeatureShape{384, 14, 14}));
  EXPECT_EQ(by["tail.down"], (FeatureShape{1280, 7, 7}));
}

TEST(BuilderTest, ConfigErrors) {
  ModelConfig c = ModelConfig::named(Variant::kS);
  c.height = 200;
  EXPECT_THROW(build_model(c), ConfigError);
  c = ModelConfig::named(Variant::kS);
  c.num_streams = 2;
  c.stream_widths = {192, 384};
  EXPECT_THROW(build_model(c), ConfigError);
  c = ModelConfig::named(Variant::kM);
  c.stream_widths[0] = 100;
  EXPECT_THROW(build_model(c), ConfigError);
  ModelConfig k = cifar_config(0);
  k.height = k.width = 64;
  EXPECT_THROW(build_model(k), ConfigError);
}

TEST(BuilderTest, CifarShape) {
  for (std::int64_t classes : {10, 100}) {
    const ModelGraph g = init_weights(build_model(cifar_config(0, classes)), 1, InitStyle::kRandomized);
    const Tensor y = run_sequential(g, testing::random_tensor(Shape{2, 3, 32, 32}, 2));
    EXPECT_EQ(y.shape(), (Shape{2, classes}));
  }
  const ModelGraph g = build_model(cifar_config(1));
  std::map<std::string, const Node*> by;
  for (const auto& n : g.nodes) by[n.name] = &n;
  EXPECT_EQ(by.at("stem.rep1")->spec.kind, BlockKind::kRepVggSse);
  EXPECT_EQ(by.at("tail.conv1x1")->spec.kind, BlockKind::kConv1x1Head);
  EXPECT_EQ(by.count("tail.down"), 0u);
}

TEST(BuilderTest, CifarParameterTargets) {
  const double targets[] = {1.3e6, 15.5e6, 35e6};
  for (int i = 0; i < 3; ++i) {
    const double p = static_cast<double>(count_params(build_model(cifar_config(i))));
    EXPECT_LT(std::abs(p / targets[i] - 1.0), 0.10) << i << ": " << p;
  }
}

TEST(CountTest, ClosedForms) {
  // A deployed width-changing RepVggSse block is a single biased 3x3 conv.
  const BlockSpec conv{BlockKind::kRepVggSse, 2, 4, 1, 1, BlockForm::kDeployed};
  EXPECT_EQ(count_block_params(conv), 2 * 4 * 9 + 4);
  // Trainable form adds two BN 4-tuples and the 1x1 branch.
  EXPECT_EQ(count_block_params({BlockKind::kRepVggSse, 2, 4, 1, 1}), 72 + 16 + 8 + 16);
  // Downsampling: 3x3 + BN, 1x1 + BN, gate with bias.
  EXPECT_EQ(count_block_params({BlockKind::kDownsampling, 6, 8, 2, 1}), 6 * 8 * 9 + 32 + 48 + 32 + 48 + 8);
  EXPECT_EQ(count_block_params({BlockKind::kFusionBlock, 8, 8, 2, 2}), 4 * 8 * 9 + 32 + 32 + 32 + 32 + 8);
  EXPECT_EQ(count_block_params({BlockKind::kFinalHead, 2, 4, 1, 1}), 12);
}

TEST(CountTest, StoredMatchesCounted) {
  const ModelGraph g = init_weights(build_model(ModelConfig::named(Variant::kS)), 1);
  EXPECT_EQ(count_stored_params(g), count_params(g));
  const ModelGraph c = init_weights(build_model(cifar_config(0)), 1);
  EXPECT_EQ(count_stored_params(c), count_params(c));
}

TEST(CountTest, NamedVariantCounts) {
  // Pinned outputs of the counter; the ledger compares them with the published figures.
  const std::int64_t trainable[] = {21019272, 39002088, 60240968, 93252288};
  for (int i = 0; i < 4; ++i) {
    const ModelGraph g = build_model(ModelConfig::named(kNamed[i]));
    EXPECT_EQ(count_params(g), trainable[i]) << to_string(kNamed[i]);
  }
  // Folded (inference) accounting lands on the published L / XL figures.
  EXPECT_NEAR(count_params(build_model(ModelConfig::named(Variant::kL)), CountForm::kFolded) / 1e6, 54.9, 54.9 * 0.05);
  EXPECT_NEAR(count_params(build_model(ModelConfig::named(Variant::kXL)), CountForm::kFolded) / 1e6, 85.0, 85.0 * 0.05);
}

TEST(CountTest, AbsorptionClosedForm) {
  for (auto v : kNamed) {
    const ModelGraph g = build_model(ModelConfig::named(v));
    EXPECT_EQ(count_params(g) - count_params(deployed_topology(g)), fusion_absorption(g).total());
  }
  const ModelGraph c = build_model(cifar_config(2));
  EXPECT_EQ(count_params(c) - count_params(deployed_topology(c)), fusion_absorption(c).total());
}

TEST(FlopTest, ClosedForm) {
  // One deployed 3x3 conv, 3 -> 1 channels, stride 1, 4x4 output: 2 * 27 * 16.
  EXPECT_EQ(count_flops(one_block_graph({BlockKind::kRepVggSse, 3, 1, 1, 1, BlockForm::kDeployed}), 4, 4), 2 * 27 * 16);
  // Trainable: plus the 1x1 branch.
  EXPECT_EQ(count_flops(one_block_graph({BlockKind::kRepVggSse, 3, 1, 1, 1}), 4, 4), 2 * (27 + 3) * 16);
}

TEST(FlopTest, ResolutionQuadratic) {
  const ModelGraph g = build_model(ModelConfig::named(Variant::kS));
  const double ratio = static_cast<double>(count_flops(g, 448, 448)) / static_cast<double>(count_flops(g, 224, 224));
  // Gates and the classifier act on pooled features and do not grow.
  EXPECT_GT(ratio, 3.99);
  EXPECT_LE(ratio, 4.0);
}

TEST(FlopTest, DeployedLAndXL) {
  const double l = count_flops(deployed_topology(build_model(ModelConfig::named(Variant::kL))), 224, 224) / 1e9;
  const double xl = count_flops(deployed_topology(build_model(ModelConfig::named(Variant::kXL))), 224, 224) / 1e9;
  EXPECT_NEAR(l, 26.7, 2.67);
  EXPECT_NEAR(xl, 41.5, 4.15);
}

TEST(FlopTest, InfeasibleResolution) {
  EXPECT_THROW(count_flops(build_model(ModelConfig::named(Variant::kS)), 224, 200), ShapeError);
}

TEST(DepthTest, MinimalAndCycle) {
  ModelGraph g = one_block_graph({BlockKind::kRepVggSse, 3, 4, 1, 1, BlockForm::kDeployed});
  g.nodes.push_back({1, "head", {BlockKind::kFinalHead, 4, 10, 1, 1}, NodeRole::kTail, 0, 1, {0}, std::nullopt});
  g.output = 1;
  EXPECT_EQ(compute_depth(g), 2);
  g.nodes[0].inputs = {1};
  EXPECT_THROW(compute_depth(g), GraphError);
}

TEST(ScaleTest, IdentityAndArithmetic) {
  const ModelConfig s = ModelConfig::named(Variant::kS);
  const ModelConfig same = scale_config(s, 3, 1.0, 224, 224);
  EXPECT_EQ(same.stream_widths, s.stream_widths);
  EXPECT_EQ(same.final_width, s.final_width);
  EXPECT_EQ(count_params(build_model(same)), count_params(build_model(s)));
  EXPECT_EQ(scale_config(s, 3, 2.0, 224, 224).stream_widths, (std::vector<std::int64_t>{192, 384, 768}));
  for (auto w : scale_config(s, 3, 1.37, 224, 224).stream_widths) EXPECT_EQ(w % 8, 0);
  EXPECT_THROW(scale_config(s, 5, 1.0, 224, 224), ConfigError);
  EXPECT_THROW(scale_config(s, 0, 1.0, 224, 224), ConfigError);
  EXPECT_THROW(scale_config(s, 3, -1.0, 224, 224), ConfigError);
}

TEST(ScaleTest, StreamCounts) {
  const ModelConfig s = ModelConfig::named(Variant::kS);
  for (int k = 1; k <= 4; ++k) {
    for (std::int64_t r : {224, 320}) {
      const ModelGraph g = build_model(scale_config(s, k, 1.0, r, r));
      EXPECT_NO_THROW(infer_shapes(g, r, r));
      EXPECT_EQ(compute_depth(g), 12) << k;
      int fusions = 0;
      for (const auto& n : g.nodes) fusions += n.spec.kind == BlockKind::kFusionBlock ? 1 : 0;
      EXPECT_EQ(fusions, k - 1);
    }
  }
  // One stream keeps the lowest-resolution chain.
  const ModelGraph one = build_model(scale_config(s, 1, 1.0, 224, 224));
  for (const auto& n : one.nodes) {
    if (n.role == NodeRole::kStream) EXPECT_EQ(n.spec.c_out, 384);
  }
}

TEST(ScaleTest, ParameterBudget) {
  const ModelConfig s = ModelConfig::named(Variant::kS);
  const std::int64_t budget = 25'000'000;
  for (int k = 1; k <= 4; ++k) {
    const ModelConfig c = match_param_budget(s, k, budget, 224, 224);
    EXPECT_EQ(c.num_streams, k);
    EXPECT_LT(std::abs(static_cast<double>(count_params(build_model(c))) / budget - 1.0), 0.02) << k;
  }
}

TEST(InitTest, DeterministicPerSeed) {
  const ModelGraph g = build_model(toy_config());
  const ModelGraph a = init_weights(g, 5), b = init_weights(g, 5), c = init_weights(g, 6);
  bool differs = false;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    BlockWeights wa = *a.nodes[i].weights, wb = *b.nodes[i].weights, wc = *c.nodes[i].weights;
    const auto ra = weight_refs(wa), rb = weight_refs(wb), rc = weight_refs(wc);
    for (size_t k = 0; k < ra.size(); ++k) {
      EXPECT_TRUE(std::equal(ra[k].data, ra[k].data + ra[k].shape.numel(), rb[k].data));
      differs = differs || !std::equal(ra[k].data, ra[k].data + ra[k].shape.numel(), rc[k].data);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(InitTest, TrainingInitConventions) {
  const ModelGraph g = init_weights(build_model(toy_config()), 1);
  for (const auto& n : g.nodes) {
    const auto& w = *n.weights;
    if (w.se_fc) {
      const Tensor gate = se_gate(testing::random_tensor(Shape{2, n.spec.c_in, 4, 4}, 1), *w.se_fc);
      for (float v : gate.data()) EXPECT_EQ(v, 0.5f);
    }
    if (w.conv3) {
      for (float v : w.conv3->bn.gamma) EXPECT_EQ(v, 1.f);
      for (float v : w.conv3->bn.running_var) EXPECT_EQ(v, 1.f);
      // He-normal: sample std close to sqrt(2 / fan_in) for big enough kernels.
      const auto& wt = w.conv3->conv.weight;
      if (wt.numel() >= 2000) {
        double ss = 0;
        for (float v : wt.data()) ss += static_cast<double>(v) * v;
        const double fan_in = static_cast<double>(wt.dim(1) * 9);
        EXPECT_NEAR(std::sqrt(ss / static_cast<double>(wt.numel())), std::sqrt(2.0 / fan_in), 0.1 * std::sqrt(2.0 / fan_in))
            << n.name;
      }
    }
  }
}

TEST(ConfigIoTest, NamedAndRoundTrip) {
  const ModelConfig s = parse_config(R"({"variant": "S"})");
  EXPECT_EQ(s, ModelConfig::named(Variant::kS));
  const ModelConfig xl = parse_config(R"({"variant":"XL","num_streams":3,"resolution":[320,320],"num_classes":10,
                                          "dataset_shape":"imagenet"})");
  EXPECT_EQ(xl.stream_widths, (std::vector<std::int64_t>{200, 400, 800}));
  EXPECT_EQ(xl.height, 320);
  EXPECT_EQ(xl.num_classes, 10);
  for (const ModelConfig& c : {s, xl, cifar_config(1), toy_config(), scale_config(s, 4, 1.5, 256, 256)}) {
    EXPECT_EQ(parse_config(config_to_json(c)), c);
  }
}

TEST(ConfigIoTest, Rejections) {
  EXPECT_THROW(parse_config(R"({"variant": "S", "depth": 12})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "Q"})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"num_streams": 3})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "custom", "num_streams": 3})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "S", "stream_widths": [96, 192, 385]})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "S", "num_streams": 2})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "custom", "num_streams": 2, "stream_widths": [8], "final_width": 8})"),
               ConfigError);
  EXPECT_THROW(parse_config("{\"variant\": "), ConfigError);
  EXPECT_THROW(parse_config(R"({"variant": "S", "resolution": [224]})"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/cfg.json"), ConfigError);
}

}  // namespace
}  // namespace parnet
