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

// ParNet building blocks.
//
//   RepVggSse     silu(BN(conv3x3 x) + BN(conv1x1 x) + skipBN(x) * sigmoid(fc(gap x)))
//   Downsampling  silu(BN(conv3x3/2 x) + BN(conv1x1 avgpool x)) * sigmoid(fc(gap x))
//   FusionBlock   Downsampling applied to concat(x1, x2), all convs and the gate in
//                 two groups. The stride-1 variant skips the pooling.
//   Conv1x1Head   silu(BN(conv1x1 x)), the narrow last layer of the CIFAR networks.
//   FinalHead     fc(gap x); softmax lives in the loss.
//
// A RepVggSse block whose channel counts differ (the CIFAR entry block) has no
// skip/SSE branch, following the RepVGG convention for non-identity shapes.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "parnet/ops.hpp"

namespace parnet {

enum class BlockKind { kRepVggSse, kDownsampling, kFusionBlock, kFinalHead, kConv1x1Head };
enum class BlockForm { kTrainable, kDeployed };

const char* to_string(BlockKind kind);
const char* to_string(BlockForm form);

class BlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BlockSpec {
  BlockKind kind = BlockKind::kRepVggSse;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  int stride = 1;
  int groups = 1;
  BlockForm form = BlockForm::kTrainable;

  bool has_skip() const { return kind == BlockKind::kRepVggSse && c_in == c_out; }
  /// Throws BlockError when the combination of fields is not a legal block.
  void validate() const;
};

template <typename T>
struct BasicConvBn {
  BasicConvParams<T> conv;
  BasicBatchNormParams<T> bn;
};

/// Per-channel affine map y = scale * x + shift.
template <typename T>
struct BasicChannelAffine {
  std::vector<T> scale;
  std::vector<T> shift;
};

template <typename T>
struct BasicBlockWeights {
  std::optional<BasicConvBn<T>> conv3;
  std::optional<BasicConvBn<T>> conv1;
  std::optional<BasicBatchNormParams<T>> skip_bn;
  std::optional<BasicConvParams<T>> se_fc;  // 1x1 conv with bias on the pooled input
  std::optional<BasicConvParams<T>> fused;  // deployed RepVggSse
  std::optional<BasicChannelAffine<T>> skip_affine;  // deployed RepVggSse
  std::optional<BasicTensor<T>> fc_weight;  // FinalHead [classes, c_in]
  std::optional<BasicTensor<T>> fc_bias;    // FinalHead [classes]
};

using ConvBn = BasicConvBn<float>;
using ChannelAffine = BasicChannelAffine<float>;
using BlockWeights = BasicBlockWeights<float>;

/// Allocates correctly-shaped weights: conv kernels zero, BNs identity, gates zero.
BlockWeights make_block_weights(const BlockSpec& spec);

/// Throws BlockError if `w` does not carry exactly the tensors `spec` requires.
void check_block_weights(const BlockSpec& spec, const BlockWeights& w);

Tensor repvgg_sse_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec);
Tensor downsampling_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec);
Tensor fusion_block_forward(const Tensor& x1, const Tensor& x2, const BlockWeights& w, const BlockSpec& spec);
Tensor conv1x1_head_forward(const Tensor& x, const BlockWeights& w, const BlockSpec& spec);
Tensor final_head_forward(const Tensor& x, const BlockWeights& w);

/// Recombines the two conv branches and the gate of Downsampling/Fusion blocks.
/// The gate multiplies after the activation; flipping that order is a one-line change here.
Tensor gated_activation(const Tensor& conv_sum, const Tensor& gate);

/// sigmoid(fc(gap(x))), shape [n, c_out, 1, 1].
Tensor se_gate(const Tensor& x, const ConvParams& fc);

/// A view of one stored tensor of a block. BN vectors and skip affines appear
/// as rank-1 tensors.
struct WeightRef {
  std::string name;  // "conv3.weight", "bn3.running_var", "fc.bias", ...
  Shape shape;
  float* data = nullptr;
  bool trainable = false;  // false for BN running statistics and deployed-only tensors
};

/// All tensors of `w` in a fixed order. Names are stable and documented in the README.
std::vector<WeightRef> weight_refs(BlockWeights& w);

/// Dispatches on spec.kind. `x2` is only used by FusionBlock.
Tensor block_forward(const BlockSpec& spec, const BlockWeights& w, const Tensor& x, const Tensor* x2 = nullptr);

}  // namespace parnet
