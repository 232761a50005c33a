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

// Depth, parameter and FLOP accounting. Everything here works from block specs
// alone, so unweighted graphs can be analyzed at any width.
//
// FLOPs are 2 x multiply-accumulates of every conv and fully-connected layer
// (gates included); BN, activations and pooling are free.

#pragma once

#include <cstdint>
#include <vector>

#include "parnet/graph.hpp"

namespace parnet {

struct FeatureShape {
  std::int64_t channels = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  bool operator==(const FeatureShape&) const = default;
};

/// Output shape of every node for one input resolution. Throws ShapeError if
/// a stride-2 block sees odd dims or fusion inputs disagree.
std::vector<FeatureShape> infer_shapes(const ModelGraph& g, std::int64_t height, std::int64_t width);

/// Longest input-to-output path, one per block (the head included).
int compute_depth(const ModelGraph& g);

/// How parameters and FLOPs are tallied.
enum class CountForm {
  kAsBuilt,  // the graph's own form: every weight, bias and BN 4-tuple it stores
  kFolded,   // inference accounting: every conv+BN pair as one biased conv, each
             // parallel 1x1 branch merged into its 3x3 kernel, skip BN as scale+shift
};

std::int64_t count_block_params(const BlockSpec& spec, CountForm form = CountForm::kAsBuilt);
std::int64_t count_params(const ModelGraph& g, CountForm form = CountForm::kAsBuilt);

/// Closed-form difference between a trainable RepVggSse block and its deployed form.
struct FusionAbsorption {
  std::int64_t bn_params = 0;
  std::int64_t pointwise_weights = 0;
  std::int64_t total() const { return bn_params + pointwise_weights; }
};
FusionAbsorption fusion_absorption(const BlockSpec& trainable_spec);
FusionAbsorption fusion_absorption(const ModelGraph& trainable);

std::int64_t count_flops(const ModelGraph& g, std::int64_t height, std::int64_t width,
                         CountForm form = CountForm::kAsBuilt);

/// Parameters actually stored in a weighted graph (sums tensor sizes).
std::int64_t count_stored_params(const ModelGraph& g);

}  // namespace parnet
