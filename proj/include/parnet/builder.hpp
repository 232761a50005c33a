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

#pragma once

#include <cstdint>
#include <string>

#include "parnet/graph.hpp"

namespace parnet {

/// ImageNet-shaped network. With three streams:
///
///   down1 -> down2 -> down3 -> down4
///              |        |        |
///           stream1  stream2  stream3     (4, 5, 5 RepVggSse blocks)
///              |        |        |
///           down ---> fusion2 -> fusion3 -> down(final_width) -> head
///
/// Other stream counts attach streams to the last `num_streams` stem outputs. A
/// single stream gets one extra block in place of the missing fusion.
ModelGraph build_imagenet(const ModelConfig& cfg);

/// CIFAR-shaped network: three full-resolution RepVggSse stem blocks, streams of
/// 3/4/4 blocks and a narrow 1x1 conv in place of the wide final Downsampling.
ModelGraph build_cifar(const ModelConfig& cfg);

/// Dispatches on cfg.dataset.
ModelGraph build_model(const ModelConfig& cfg);

/// Custom config with widths scaled by `width_mult` (rounded to multiples of 8)
/// and the given stream count and resolution.
ModelConfig scale_config(const ModelConfig& base, int streams, double width_mult, std::int64_t height,
                         std::int64_t width);

/// Width multiplier search: the scaled config with `streams` streams whose
/// trainable parameter count is closest to `budget`.
ModelConfig match_param_budget(const ModelConfig& base, int streams, std::int64_t budget, std::int64_t height,
                               std::int64_t width);

/// The three CIFAR size points shipped with the project (0: ~1.3M, 1: ~15.5M, 2: ~35M params).
ModelConfig cifar_config(int size_index, std::int64_t num_classes = 10);

/// The mini network used by the toy trainer (CIFAR shape, widths 8/16/32).
ModelConfig toy_config();

enum class InitStyle {
  kTraining,    // He-normal convs, identity BN, zero gates, zero head
  kRandomized,  // additionally random BN statistics, gates and head; used for equivalence tests
};

/// Allocates and fills every node's weights; deterministic per seed.
ModelGraph init_weights(ModelGraph g, std::uint64_t seed, InitStyle style = InitStyle::kTraining);

/// Fills the weights of a single block the same way init_weights does.
void init_block_weights(const BlockSpec& spec, BlockWeights& w, std::uint64_t seed, InitStyle style);

}  // namespace parnet
