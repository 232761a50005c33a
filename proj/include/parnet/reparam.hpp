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

// Structural reparameterization of RepVggSse blocks: BN folding, 1x1 -> 3x3
// embedding, and the graph-level rewrite to the deployed form.

#pragma once

#include <cstdint>

#include "parnet/graph.hpp"

namespace parnet {

class ReparamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// conv(x, fold_bn_into_conv(p, bn)) == batchnorm_eval(conv(x, p), bn). Computed in double.
ConvParams fold_bn_into_conv(const ConvParams& p, const BatchNormParams& bn);

/// Embeds a stride-1 1x1 kernel at the centre of a zero 3x3 kernel, padding 1.
ConvParams pad_1x1_to_3x3(const ConvParams& p);

/// Trainable RepVggSse weights -> deployed weights (single biased 3x3 conv and
/// the skip BN as a per-channel affine map).
BlockWeights fuse_block(const BlockWeights& w, const BlockSpec& spec);

/// Rewrites every RepVggSse node to deployed form; other nodes are copied.
ModelGraph fuse_model(const ModelGraph& g);

/// Deployed-form copy of a trainable topology without weights, e.g. to load a fused checkpoint into.
ModelGraph deployed_topology(const ModelGraph& g);

struct EquivalenceReport {
  int trials = 0;
  double max_diff = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Runs `trials` seeded random inputs through both graphs and compares logits.
EquivalenceReport verify_equivalence(const ModelGraph& g_train, const ModelGraph& g_fused, int trials, double tol,
                                     std::uint64_t seed = 0, std::int64_t batch = 1);

}  // namespace parnet
