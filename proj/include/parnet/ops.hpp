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

// Forward neural operators on NCHW tensors. All operators are pure and
// single-threaded; the same inputs always produce bit-identical outputs.
// Instantiated for float (inference, training) and double (gradient checks).

#pragma once

#include <optional>
#include <vector>

#include "parnet/tensor.hpp"

namespace parnet {

inline constexpr double kDefaultBnEpsilon = 1e-5;

template <typename T>
struct BasicConvParams {
  BasicTensor<T> weight;  // [c_out, c_in / groups, k, k]
  std::optional<BasicTensor<T>> bias;  // [c_out]
  int stride = 1;
  int padding = 0;
  int groups = 1;

  std::int64_t c_out() const { return weight.dim(0); }
  std::int64_t c_in() const { return weight.dim(1) * groups; }
  std::int64_t kernel() const { return weight.dim(2); }

  /// Throws ShapeError if the weight layout, kernel size or grouping is invalid.
  void validate() const;

  template <typename U>
  BasicConvParams<U> cast() const {
    BasicConvParams<U> p;
    p.weight = weight.template cast<U>();
    if (bias) p.bias = bias->template cast<U>();
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    return p;
  }
};

template <typename T>
struct BasicBatchNormParams {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = static_cast<T>(kDefaultBnEpsilon);

  std::int64_t channels() const { return static_cast<std::int64_t>(gamma.size()); }
  void validate() const;

  static BasicBatchNormParams identity(std::int64_t channels);

  template <typename U>
  BasicBatchNormParams<U> cast() const {
    BasicBatchNormParams<U> b;
    b.gamma.assign(gamma.begin(), gamma.end());
    b.beta.assign(beta.begin(), beta.end());
    b.running_mean.assign(running_mean.begin(), running_mean.end());
    b.running_var.assign(running_var.begin(), running_var.end());
    b.epsilon = static_cast<U>(epsilon);
    return b;
  }
};

using ConvParams = BasicConvParams<float>;
using BatchNormParams = BasicBatchNormParams<float>;

enum class Activation { kSilu, kSigmoid, kRelu };
enum class ElementwiseOp { kAdd, kMul };

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicConvParams<T>& p);

template <typename T>
BasicTensor<T> batchnorm_eval(const BasicTensor<T>& x, const BasicBatchNormParams<T>& bn);

template <typename T>
struct BatchNormTrainResult {
  BasicTensor<T> y;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;  // biased
  BasicBatchNormParams<T> updated;  // running stats blended with rate `momentum`
};

/// Normalizes with batch statistics. Requires at least two elements per channel.
template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>& x, const BasicBatchNormParams<T>& bn, T momentum);

template <typename T>
T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
T silu(T v) {
  return v * sigmoid(v);
}

template <typename T>
BasicTensor<T> activation(Activation kind, const BasicTensor<T>& x);

/// 2x2 window, stride 2. Spatial dims must be even.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x);

/// [n, c, h, w] -> [n, c, 1, 1]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

/// x: [n, c_in] (or [n, c_in, 1, 1]); w: [c_out, c_in]; b: [c_out]. Returns [n, c_out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Channels [begin, begin + count) of a rank-4 tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t count);

/// b must match a exactly or be [n, c, 1, 1] (broadcast over space).
template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace parnet
