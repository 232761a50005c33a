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

#include "parnet/reparam.hpp"

#include <cmath>
#include <random>

#include "parnet/executor.hpp"

namespace parnet {

ConvParams fold_bn_into_conv(const ConvParams& p, const BatchNormParams& bn) {
  p.validate();
  bn.validate();
  if (bn.channels() != p.c_out()) {
    throw ShapeError("fold_bn_into_conv: BN has " + std::to_string(bn.channels()) + " channels, conv has " +
                     std::to_string(p.c_out()));
  }
  ConvParams out = p;
  out.bias = Tensor(Shape{p.c_out()});
  const std::int64_t per_out = p.weight.numel() / p.c_out();
  for (std::int64_t o = 0; o < p.c_out(); ++o) {
    const double k = static_cast<double>(bn.gamma[o]) /
                     std::sqrt(static_cast<double>(bn.running_var[o]) + static_cast<double>(bn.epsilon));
    const float* src = p.weight.ptr() + o * per_out;
    float* dst = out.weight.ptr() + o * per_out;
    for (std::int64_t i = 0; i < per_out; ++i) dst[i] = static_cast<float>(src[i] * k);
    const double b = p.bias ? static_cast<double>((*p.bias)[o]) : 0.0;
    (*out.bias)[o] = static_cast<float>((b - bn.running_mean[o]) * k + bn.beta[o]);
  }
  return out;
}

ConvParams pad_1x1_to_3x3(const ConvParams& p) {
  p.validate();
  if (p.kernel() != 1) throw ShapeError("pad_1x1_to_3x3 needs a 1x1 kernel, got " + p.weight.shape().str());
  if (p.stride != 1 || p.padding != 0) throw ShapeError("pad_1x1_to_3x3 needs stride 1 and padding 0");
  ConvParams out = p;
  const auto co = p.weight.dim(0), ci = p.weight.dim(1);
  out.weight = Tensor(Shape{co, ci, 3, 3});
  for (std::int64_t o = 0; o < co; ++o) {
    for (std::int64_t i = 0; i < ci; ++i) out.weight.at(o, i, 1, 1) = p.weight.at(o, i, 0, 0);
  }
  out.padding = 1;
  return out;
}

BlockWeights fuse_block(const BlockWeights& w, const BlockSpec& spec) {
  if (spec.kind != BlockKind::kRepVggSse) {
    throw ReparamError(std::string("only RepVggSse blocks can be fused, got ") + to_string(spec.kind));
  }
  if (spec.form != BlockForm::kTrainable) throw ReparamError("block is already in deployed form");
  check_block_weights(spec, w);

  const ConvParams a = fold_bn_into_conv(w.conv3->conv, w.conv3->bn);
  const ConvParams b = pad_1x1_to_3x3(fold_bn_into_conv(w.conv1->conv, w.conv1->bn));
  ConvParams fused = a;
  for (std::int64_t i = 0; i < fused.weight.numel(); ++i) fused.weight[i] += b.weight[i];
  for (std::int64_t i = 0; i < fused.bias->numel(); ++i) (*fused.bias)[i] += (*b.bias)[i];

  BlockWeights out;
  out.fused = std::move(fused);
  if (spec.has_skip()) {
    const auto& bn = *w.skip_bn;
    ChannelAffine aff;
    for (std::int64_t c = 0; c < bn.channels(); ++c) {
      const double k = static_cast<double>(bn.gamma[c]) /
                       std::sqrt(static_cast<double>(bn.running_var[c]) + static_cast<double>(bn.epsilon));
      aff.scale.push_back(static_cast<float>(k));
      aff.shift.push_back(static_cast<float>(bn.beta[c] - bn.running_mean[c] * k));
    }
    out.skip_affine = std::move(aff);
    out.se_fc = w.se_fc;
  }
  return out;
}

ModelGraph fuse_model(const ModelGraph& g) {
  if (g.form() != GraphForm::kTrainable) {
    throw ReparamError(std::string("fuse_model needs a trainable graph, got ") + to_string(g.form()));
  }
  if (!g.has_weights()) throw ReparamError("fuse_model needs a weighted graph");
  ModelGraph out = g;
  for (auto& n : out.nodes) {
    if (n.spec.kind != BlockKind::kRepVggSse) continue;
    n.weights = fuse_block(*n.weights, n.spec);
    n.spec.form = BlockForm::kDeployed;
  }
  out.fused = true;
  return out;
}

ModelGraph deployed_topology(const ModelGraph& g) {
  ModelGraph out = g;
  for (auto& n : out.nodes) {
    n.weights.reset();
    if (n.spec.kind == BlockKind::kRepVggSse) n.spec.form = BlockForm::kDeployed;
  }
  out.fused = true;
  return out;
}

namespace {

void require_same_topology(const ModelGraph& a, const ModelGraph& b) {
  auto fail = [](const std::string& why) { throw GraphError("verify_equivalence: topology mismatch: " + why); };
  if (a.nodes.size() != b.nodes.size()) fail("node counts differ");
  if (a.output != b.output) fail("outputs differ");
  for (size_t i = 0; i < a.nodes.size(); ++i) {
    const auto &x = a.nodes[i], &y = b.nodes[i];
    if (x.name != y.name || x.inputs != y.inputs || x.spec.kind != y.spec.kind || x.spec.c_in != y.spec.c_in ||
        x.spec.c_out != y.spec.c_out || x.spec.stride != y.spec.stride || x.spec.groups != y.spec.groups) {
      fail("node " + x.name + " vs " + y.name);
    }
  }
  if (a.config.height != b.config.height || a.config.width != b.config.width) fail("input resolutions differ");
}

}  // namespace

EquivalenceReport verify_equivalence(const ModelGraph& g_train, const ModelGraph& g_fused, int trials, double tol,
                                     std::uint64_t seed, std::int64_t batch) {
  require_same_topology(g_train, g_fused);
  EquivalenceReport r;
  r.trials = trials;
  r.tolerance = tol;
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.f, 1.f);
  for (int t = 0; t < trials; ++t) {
    Tensor x(Shape{batch, 3, g_train.config.height, g_train.config.width});
    for (auto& v : x.data()) v = d(rng);
    const Tensor ya = run_sequential(g_train, x);
    const Tensor yb = run_sequential(g_fused, x);
    r.max_diff = std::max(r.max_diff, static_cast<double>(max_abs_diff(ya, yb)));
  }
  r.pass = r.max_diff < tol;
  return r;
}

}  // namespace parnet
