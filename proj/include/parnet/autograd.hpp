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

// Reverse-mode differentiation over a linear tape. Each recorded op keeps the
// primal values it needs; backward() walks the tape once in reverse.
// Instantiated for float (training) and double (finite-difference checks).

#pragma once

#include <functional>
#include <vector>

#include "parnet/ops.hpp"

namespace parnet::ad {

using Var = int;

template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;

  Var leaf(TensorT value, bool requires_grad = true);
  /// Rank-1 leaf built from a per-channel vector.
  Var leaf(const std::vector<T>& values, bool requires_grad = true);

  const TensorT& value(Var v) const { return entries_.at(static_cast<size_t>(v)).value; }
  /// Gradient after backward(); zeros if nothing flowed into v.
  TensorT grad(Var v) const;
  size_t size() const { return entries_.size(); }

  Var conv2d(Var x, Var weight, int stride, int padding, int groups, Var bias = -1);
  /// Batch statistics; writes the biased batch mean/var if the pointers are non-null.
  Var batchnorm_train(Var x, Var gamma, Var beta, T epsilon, std::vector<T>* batch_mean = nullptr,
                      std::vector<T>* batch_var = nullptr);
  Var batchnorm_eval(Var x, Var gamma, Var beta, const std::vector<T>& mean, const std::vector<T>& var, T epsilon);
  Var activation(Activation kind, Var x);
  Var avg_pool2d(Var x);
  Var global_avg_pool(Var x);
  Var linear(Var x, Var weight, Var bias);
  Var concat_channels(Var a, Var b);
  Var add(Var a, Var b);
  /// b equal-shaped or [n, c, 1, 1].
  Var mul(Var a, Var b);
  Var scale(Var x, T s);
  /// Scalar (shape [1]) sum of all entries.
  Var sum(Var x);
  /// Scalar mean over the batch of the cross-entropy against (1 - eps) * onehot + eps / K.
  Var label_smooth_ce(Var logits, const std::vector<int>& labels, T eps);

  /// Seeds d(root) = seed (root must be a scalar) and propagates.
  void backward(Var root, T seed = T(1));

 private:
  struct Entry {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(const TensorT& g)> back;
  };

  Var push(TensorT value, std::initializer_list<Var> inputs, std::function<void(const TensorT&)> back);
  bool needs(Var v) const { return v >= 0 && entries_[static_cast<size_t>(v)].requires_grad; }
  void accumulate(Var v, const TensorT& g);

  std::vector<Entry> entries_;
};

}  // namespace parnet::ad
