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

// Shared helpers for the unit tests: seeded random tensors and direct
// nested-loop reference operators.

#pragma once

#include <cmath>
#include <random>

#include "parnet/ops.hpp"

namespace parnet::testing {

inline Tensor random_tensor(Shape s, std::uint64_t seed, float lo = -1.f, float hi = 1.f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline BatchNormParams random_bn(std::int64_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.5f, 1.5f), v(-0.3f, 0.3f);
  BatchNormParams bn;
  for (std::int64_t i = 0; i < c; ++i) {
    bn.gamma.push_back(u(rng));
    bn.beta.push_back(v(rng));
    bn.running_mean.push_back(v(rng));
    bn.running_var.push_back(u(rng));
  }
  return bn;
}

inline ConvParams random_conv(std::int64_t c_in, std::int64_t c_out, int k, int stride, int pad, int groups,
                              bool bias, std::uint64_t seed) {
  // Uniform with unit output variance, the scale the initializer produces.
  const float r = std::sqrt(3.f / static_cast<float>(c_in / groups * k * k));
  ConvParams p;
  p.weight = random_tensor(Shape{c_out, c_in / groups, k, k}, seed, -r, r);
  if (bias) p.bias = random_tensor(Shape{c_out}, seed + 1);
  p.stride = stride;
  p.padding = pad;
  p.groups = groups;
  return p;
}

// Textbook direct convolution, accumulated in double.
inline Tensor reference_conv(const Tensor& x, const ConvParams& p) {
  const auto n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto co = p.weight.dim(0), cig = p.weight.dim(1), k = p.weight.dim(2);
  const auto ho = (h + 2 * p.padding - k) / p.stride + 1, wo = (w + 2 * p.padding - k) / p.stride + 1;
  const auto cog = co / p.groups;
  Tensor y(Shape{n, co, ho, wo});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < co; ++o)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          double acc = p.bias ? (*p.bias)[o] : 0.0;
          const auto g = o / cog;
          for (std::int64_t c = 0; c < cig; ++c)
            for (std::int64_t u = 0; u < k; ++u)
              for (std::int64_t v = 0; v < k; ++v) {
                const auto yy = i * p.stride - p.padding + u, xx = j * p.stride - p.padding + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                acc += static_cast<double>(x.at(b, g * cig + c, yy, xx)) * p.weight.at(o, c, u, v);
              }
          y.at(b, o, i, j) = static_cast<float>(acc);
        }
  return y;
}

inline Tensor reference_bn(const Tensor& x, const BatchNormParams& bn) {
  Tensor y(x.shape());
  for (std::int64_t b = 0; b < x.dim(0); ++b)
    for (std::int64_t c = 0; c < x.dim(1); ++c)
      for (std::int64_t i = 0; i < x.dim(2); ++i)
        for (std::int64_t j = 0; j < x.dim(3); ++j) {
          const double s = bn.gamma[c] / std::sqrt(static_cast<double>(bn.running_var[c]) + bn.epsilon);
          y.at(b, c, i, j) = static_cast<float>(s * (x.at(b, c, i, j) - bn.running_mean[c]) + bn.beta[c]);
        }
  return y;
}

inline double ref_silu(double v) { return v / (1.0 + std::exp(-v)); }

}  // namespace parnet::testing
