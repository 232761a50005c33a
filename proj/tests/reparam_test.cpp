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

#include <set>

#include "parnet/analysis.hpp"
#include "parnet/builder.hpp"
#include "parnet/reparam.hpp"
#include "test_util.hpp"

namespace parnet {
namespace {

using testing::random_bn;
using testing::random_conv;
using testing::random_tensor;

BlockWeights initialized(const BlockSpec& spec, std::uint64_t seed) {
  BlockWeights w = make_block_weights(spec);
  init_block_weights(spec, w, seed, InitStyle::kRandomized);
  return w;
}

ModelGraph small_s(std::int64_t res = 64) {
  ModelConfig cfg = ModelConfig::named(Variant::kS);
  cfg.height = cfg.width = res;
  return build_model(cfg);
}

TEST(FoldBnTest, IdentityBnLeavesConv) {
  const ConvParams p = random_conv(3, 4, 3, 1, 1, 1, false, 1);
  auto bn = BatchNormParams::identity(4);
  for (auto& v : bn.running_var) v = 1.f - bn.epsilon;
  const ConvParams f = fold_bn_into_conv(p, bn);
  EXPECT_LT(max_abs_diff(f.weight, p.weight), 1e-7);
  ASSERT_TRUE(f.bias.has_value());
  for (float b : f.bias->data()) EXPECT_EQ(b, 0.f);
}

TEST(FoldBnTest, ScalarFold) {
  ConvParams p;
  p.weight = Tensor(Shape{1, 1, 1, 1}, 1.f);
  BatchNormParams bn{{2.f}, {0.f}, {0.f}, {0.25f - 1e-5f}};
  EXPECT_NEAR(fold_bn_into_conv(p, bn).weight[0], 4.0, 1e-5);
  p.bias = Tensor(Shape{1}, 3.f);
  bn.running_mean = {1.f};
  bn.beta = {0.5f};
  // (3 - 1) * 4 + 0.5
  EXPECT_NEAR((*fold_bn_into_conv(p, bn).bias)[0], 8.5, 1e-5);
}

TEST(FoldBnTest, CommutesWithEvaluation) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const int k = t % 2 ? 3 : 1;
    const std::int64_t c = 4 + static_cast<std::int64_t>(t % 5) * 4;
    const ConvParams p = random_conv(c, c, k, 1, k == 3 ? 1 : 0, t % 3 == 0 && k == 3 ? 2 : 1, t % 4 == 0, t);
    const auto bn = random_bn(c, t + 7);
    const Tensor x = random_tensor(Shape{1, c, 6, 6}, t + 13);
    EXPECT_LT(max_abs_diff(conv2d(x, fold_bn_into_conv(p, bn)), batchnorm_eval(conv2d(x, p), bn)), 1e-5) << t;
  }
  EXPECT_THROW(fold_bn_into_conv(random_conv(2, 3, 1, 1, 0, 1, false, 1), random_bn(2, 1)), ShapeError);
}

TEST(Pad1x1Test, CenterEmbedding) {
  ConvParams p;
  p.weight = Tensor(Shape{1, 1, 1, 1}, 5.f);
  const ConvParams q = pad_1x1_to_3x3(p);
  ASSERT_EQ(q.weight.shape(), (Shape{1, 1, 3, 3}));
  for (int i = 0; i < 9; ++i) EXPECT_EQ(q.weight[i], i == 4 ? 5.f : 0.f);
  EXPECT_EQ(q.padding, 1);
  p.weight = Tensor(Shape{2, 3, 1, 1});
  const ConvParams z = pad_1x1_to_3x3(p);
  for (float v : z.weight.data()) EXPECT_EQ(v, 0.f);
}

TEST(Pad1x1Test, SameOutputAsPointwise) {
  const ConvParams p = random_conv(6, 5, 1, 1, 0, 1, true, 3);
  const Tensor x = random_tensor(Shape{2, 6, 5, 7}, 4);
  EXPECT_LT(max_abs_diff(conv2d(x, pad_1x1_to_3x3(p)), conv2d(x, p)), 1e-6);
  EXPECT_THROW(pad_1x1_to_3x3(random_conv(2, 2, 3, 1, 1, 1, false, 1)), ShapeError);
  EXPECT_THROW(pad_1x1_to_3x3(random_conv(2, 2, 1, 2, 0, 1, false, 1)), ShapeError);
}

TEST(FuseBlockTest, VanishingPointwiseBranch) {
  const BlockSpec spec{BlockKind::kRepVggSse, 4, 4, 1, 1};
  BlockWeights w = initialized(spec, 1);
  w.conv1->conv.weight = Tensor(w.conv1->conv.weight.shape());
  w.conv1->bn = BatchNormParams::identity(4);
  const BlockWeights f = fuse_block(w, spec);
  const ConvParams alone = fold_bn_into_conv(w.conv3->conv, w.conv3->bn);
  EXPECT_LT(max_abs_diff(f.fused->weight, alone.weight), 1e-7);
  EXPECT_LT(max_abs_diff(*f.fused->bias, *alone.bias), 1e-7);
  EXPECT_FALSE(f.conv3 || f.conv1 || f.skip_bn);
}

TEST(FuseBlockTest, SkipAffine) {
  const BlockSpec spec{BlockKind::kRepVggSse, 3, 3, 1, 1};
  const BlockWeights w = initialized(spec, 2);
  const BlockWeights f = fuse_block(w, spec);
  for (int c = 0; c < 3; ++c) {
    const double k = w.skip_bn->gamma[c] / std::sqrt(static_cast<double>(w.skip_bn->running_var[c]) + w.skip_bn->epsilon);
    EXPECT_NEAR(f.skip_affine->scale[c], k, 1e-6);
    EXPECT_NEAR(f.skip_affine->shift[c], w.skip_bn->beta[c] - w.skip_bn->running_mean[c] * k, 1e-6);
  }
}

TEST(FuseBlockTest, PreservesFunction) {
  std::set<std::int64_t> widths;
  for (auto v : {Variant::kS, Variant::kM}) {
    for (const auto& n : build_model(ModelConfig::named(v)).nodes) {
      if (n.spec.kind == BlockKind::kRepVggSse) widths.insert(n.spec.c_in);
    }
  }
  std::uint64_t seed = 0;
  for (auto c : widths) {
    const BlockSpec spec{BlockKind::kRepVggSse, c, c, 1, 1};
    const BlockWeights w = initialized(spec, ++seed);
    const BlockWeights f = fuse_block(w, spec);
    BlockSpec deployed = spec;
    deployed.form = BlockForm::kDeployed;
    for (int t = 0; t < 3; ++t) {
      const Tensor x = random_tensor(Shape{1, c, 5, 5}, seed * 10 + t);
      EXPECT_LT(max_abs_diff(repvgg_sse_forward(x, w, spec), repvgg_sse_forward(x, f, deployed)), 1e-4) << c;
    }
  }
}

TEST(FuseBlockTest, WidthChangingEntryBlock) {
  const BlockSpec spec{BlockKind::kRepVggSse, 3, 16, 1, 1};
  const BlockWeights w = initialized(spec, 5);
  const BlockWeights f = fuse_block(w, spec);
  BlockSpec deployed = spec;
  deployed.form = BlockForm::kDeployed;
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, 6);
  EXPECT_LT(max_abs_diff(repvgg_sse_forward(x, w, spec), repvgg_sse_forward(x, f, deployed)), 1e-4);
  EXPECT_FALSE(f.skip_affine.has_value());
}

TEST(FuseBlockTest, Guards) {
  const BlockSpec spec{BlockKind::kRepVggSse, 4, 4, 1, 1};
  const BlockWeights f = fuse_block(initialized(spec, 1), spec);
  BlockSpec deployed = spec;
  deployed.form = BlockForm::kDeployed;
  EXPECT_THROW(fuse_block(f, deployed), ReparamError);
  const BlockSpec down{BlockKind::kDownsampling, 4, 8, 2, 1};
  EXPECT_THROW(fuse_block(initialized(down, 1), down), ReparamError);
}

TEST(FuseModelTest, CountsDepthAndTopology) {
  const ModelGraph g = init_weights(small_s(), 3, InitStyle::kRandomized);
  const ModelGraph f = fuse_model(g);
  EXPECT_TRUE(f.fused);
  EXPECT_EQ(f.form(), GraphForm::kDeployed);
  EXPECT_EQ(compute_depth(f), compute_depth(g));
  EXPECT_EQ(f.edges(), g.edges());
  const auto before = count_stored_params(g), after = count_stored_params(f);
  EXPECT_LT(after, before);
  EXPECT_EQ(before - after, fusion_absorption(g).total());
  EXPECT_EQ(after, count_params(f));
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].spec.kind == BlockKind::kRepVggSse) continue;
    EXPECT_EQ(f.nodes[i].spec.form, BlockForm::kTrainable);
    BlockWeights wg = *g.nodes[i].weights, wf = *f.nodes[i].weights;
    const auto rg = weight_refs(wg), rf = weight_refs(wf);
    ASSERT_EQ(rg.size(), rf.size());
    for (size_t k = 0; k < rg.size(); ++k) {
      EXPECT_TRUE(std::equal(rg[k].data, rg[k].data + rg[k].shape.numel(), rf[k].data)) << g.nodes[i].name;
    }
  }
}

TEST(FuseModelTest, RejectsDeployedOrMixed) {
  ModelGraph g = init_weights(small_s(), 1);
  const ModelGraph f = fuse_model(g);
  EXPECT_THROW(fuse_model(f), ReparamError);
  ModelGraph mixed = g;
  for (auto& n : mixed.nodes) {
    if (n.spec.kind == BlockKind::kRepVggSse) {
      n.weights = fuse_block(*n.weights, n.spec);
      n.spec.form = BlockForm::kDeployed;
      break;
    }
  }
  EXPECT_EQ(mixed.form(), GraphForm::kMixed);
  EXPECT_THROW(fuse_model(mixed), ReparamError);
  EXPECT_THROW(fuse_model(small_s()), ReparamError);
}

TEST(VerifyEquivalenceTest, Reports) {
  const ModelGraph g = init_weights(small_s(), 4, InitStyle::kRandomized);
  const auto same = verify_equivalence(g, g, 2, 1e-3);
  EXPECT_EQ(same.max_diff, 0.0);
  EXPECT_TRUE(same.pass);
  const ModelGraph f = fuse_model(g);
  const auto fused = verify_equivalence(g, f, 3, 1e-3);
  EXPECT_TRUE(fused.pass) << fused.max_diff;
  EXPECT_LT(fused.max_diff, 1e-3);
  ModelGraph bad = f;
  for (auto& n : bad.nodes) {
    if (n.spec.kind == BlockKind::kRepVggSse) {
      (*n.weights->fused->bias)[0] += 0.1f;
    }
  }
  const auto perturbed = verify_equivalence(g, bad, 3, 1e-3);
  EXPECT_FALSE(perturbed.pass);
  EXPECT_GT(perturbed.max_diff, 1e-3);
  ModelConfig other = ModelConfig::named(Variant::kM);
  other.height = other.width = 64;
  EXPECT_THROW(verify_equivalence(g, init_weights(build_model(other), 1), 1, 1e-3), GraphError);
}

TEST(DeployedTopologyTest, MatchesFusedSpecs) {
  const ModelGraph g = small_s();
  const ModelGraph d = deployed_topology(g);
  const ModelGraph f = fuse_model(init_weights(g, 1));
  ASSERT_EQ(d.nodes.size(), f.nodes.size());
  for (size_t i = 0; i < d.nodes.size(); ++i) {
    EXPECT_EQ(d.nodes[i].spec.form, f.nodes[i].spec.form);
    EXPECT_FALSE(d.nodes[i].weights.has_value());
  }
}

}  // namespace
}  // namespace parnet
