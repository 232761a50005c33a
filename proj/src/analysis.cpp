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

#include "parnet/analysis.hpp"

#include <algorithm>

namespace parnet {

namespace {

std::int64_t gate_groups(const BlockSpec& spec) { return spec.kind == BlockKind::kFusionBlock ? 2 : 1; }

// Weight count of a k x k conv.
std::int64_t conv_weights(const BlockSpec& s, std::int64_t k, std::int64_t groups) {
  return k * k * (s.c_in / groups) * s.c_out;
}

}  // namespace

std::vector<FeatureShape> infer_shapes(const ModelGraph& g, std::int64_t height, std::int64_t width) {
  std::vector<FeatureShape> out(g.nodes.size());
  for (int id : g.topological_order()) {
    const Node& n = g.node(id);
    FeatureShape in;
    if (n.inputs.empty()) {
      in = {3, height, width};
    } else {
      in = out[static_cast<size_t>(n.inputs[0])];
      for (size_t i = 1; i < n.inputs.size(); ++i) {
        const auto& other = out[static_cast<size_t>(n.inputs[i])];
        if (other.height != in.height || other.width != in.width) {
          throw ShapeError("node " + n.name + ": concatenated inputs disagree spatially");
        }
        in.channels += other.channels;
      }
    }
    if (in.channels != n.spec.c_in) {
      throw ShapeError("node " + n.name + " expects " + std::to_string(n.spec.c_in) + " channels, gets " +
                       std::to_string(in.channels));
    }
    FeatureShape o{n.spec.c_out, in.height, in.width};
    if (n.spec.kind == BlockKind::kFinalHead) {
      o.height = o.width = 1;
    } else if (n.spec.stride == 2) {
      if (in.height % 2 != 0 || in.width % 2 != 0) {
        throw ShapeError("node " + n.name + " halves odd spatial dims " + std::to_string(in.height) + "x" +
                         std::to_string(in.width));
      }
      o.height /= 2;
      o.width /= 2;
    }
    out[static_cast<size_t>(id)] = o;
  }
  return out;
}

int compute_depth(const ModelGraph& g) {
  std::vector<int> depth(g.nodes.size(), 0);
  int best = 0;
  for (int id : g.topological_order()) {
    int d = 0;
    for (int src : g.node(id).inputs) d = std::max(d, depth[static_cast<size_t>(src)]);
    depth[static_cast<size_t>(id)] = d + 1;
    best = std::max(best, d + 1);
  }
  return best;
}

std::int64_t count_block_params(const BlockSpec& s, CountForm form) {
  const auto co = s.c_out;
  const bool folded = form == CountForm::kFolded;
  switch (s.kind) {
    case BlockKind::kRepVggSse: {
      const std::int64_t gate = s.has_skip() ? conv_weights(s, 1, 1) + co : 0;
      if (s.form == BlockForm::kDeployed || folded) {
        return conv_weights(s, 3, 1) + co + (s.has_skip() ? 2 * co : 0) + gate;
      }
      return conv_weights(s, 3, 1) + 4 * co + conv_weights(s, 1, 1) + 4 * co + (s.has_skip() ? 4 * co : 0) + gate;
    }
    case BlockKind::kDownsampling:
    case BlockKind::kFusionBlock: {
      const std::int64_t gate = conv_weights(s, 1, gate_groups(s)) + co;
      if (folded) return conv_weights(s, 3, s.groups) + co + gate;
      return conv_weights(s, 3, s.groups) + 4 * co + conv_weights(s, 1, s.groups) + 4 * co + gate;
    }
    case BlockKind::kConv1x1Head:
      return conv_weights(s, 1, 1) + (folded ? co : 4 * co);
    case BlockKind::kFinalHead:
      return s.c_in * co + co;
  }
  return 0;
}

std::int64_t count_params(const ModelGraph& g, CountForm form) {
  std::int64_t total = 0;
  for (const auto& n : g.nodes) total += count_block_params(n.spec, form);
  return total;
}

FusionAbsorption fusion_absorption(const BlockSpec& s) {
  FusionAbsorption a;
  if (s.kind != BlockKind::kRepVggSse || s.form != BlockForm::kTrainable) return a;
  // Two BN 4-tuples become one bias; the skip BN 4-tuple becomes scale + shift.
  a.bn_params = 8 * s.c_out - s.c_out + (s.has_skip() ? 4 * s.c_out - 2 * s.c_out : 0);
  a.pointwise_weights = s.c_in * s.c_out;
  return a;
}

FusionAbsorption fusion_absorption(const ModelGraph& g) {
  FusionAbsorption total;
  for (const auto& n : g.nodes) {
    const auto a = fusion_absorption(n.spec);
    total.bn_params += a.bn_params;
    total.pointwise_weights += a.pointwise_weights;
  }
  return total;
}

std::int64_t count_flops(const ModelGraph& g, std::int64_t height, std::int64_t width, CountForm form) {
  const auto shapes = infer_shapes(g, height, width);
  const bool folded = form == CountForm::kFolded;
  std::int64_t macs = 0;
  for (const auto& n : g.nodes) {
    const auto& s = n.spec;
    const auto& o = shapes[static_cast<size_t>(n.id)];
    const std::int64_t pixels = o.height * o.width;
    switch (s.kind) {
      case BlockKind::kRepVggSse:
        macs += pixels * conv_weights(s, 3, 1);
        if (s.form == BlockForm::kTrainable && !folded) macs += pixels * conv_weights(s, 1, 1);
        if (s.has_skip()) macs += conv_weights(s, 1, 1);
        break;
      case BlockKind::kDownsampling:
      case BlockKind::kFusionBlock:
        macs += pixels * conv_weights(s, 3, s.groups);
        if (!folded) macs += pixels * conv_weights(s, 1, s.groups);
        macs += conv_weights(s, 1, gate_groups(s));
        break;
      case BlockKind::kConv1x1Head:
        macs += pixels * conv_weights(s, 1, 1);
        break;
      case BlockKind::kFinalHead:
        macs += s.c_in * s.c_out;
        break;
    }
  }
  return 2 * macs;
}

std::int64_t count_stored_params(const ModelGraph& g) {
  std::int64_t total = 0;
  auto conv = [&total](const ConvParams& p) {
    total += p.weight.numel();
    if (p.bias) total += p.bias->numel();
  };
  auto bn = [&total](const BatchNormParams& b) { total += 4 * static_cast<std::int64_t>(b.channels()); };
  for (const auto& n : g.nodes) {
    if (!n.weights) throw GraphError("node " + n.name + " has no weights");
    const auto& w = *n.weights;
    if (w.conv3) { conv(w.conv3->conv); bn(w.conv3->bn); }
    if (w.conv1) { conv(w.conv1->conv); bn(w.conv1->bn); }
    if (w.skip_bn) bn(*w.skip_bn);
    if (w.se_fc) conv(*w.se_fc);
    if (w.fused) conv(*w.fused);
    if (w.skip_affine) total += static_cast<std::int64_t>(w.skip_affine->scale.size() + w.skip_affine->shift.size());
    if (w.fc_weight) total += w.fc_weight->numel() + w.fc_bias->numel();
  }
  return total;
}

}  // namespace parnet
