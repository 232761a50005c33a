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

#include "parnet/ops.hpp"

#include <algorithm>
#include <cstring>

#include "kernels.hpp"

namespace parnet {

namespace {

using kernels::idx;

void require_rank4(const Shape& s, const char* op) {
  if (s.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + s.str());
}

}  // namespace

template <typename T>
void BasicConvParams<T>::validate() const {
  if (weight.rank() != 4) throw ShapeError("conv weight must be rank 4, got " + weight.shape().str());
  if (groups < 1 || stride < 1 || padding < 0) throw ShapeError("conv: invalid stride/padding/groups");
  const auto k = weight.dim(2);
  if (weight.dim(3) != k || (k != 1 && k != 3)) {
    throw ShapeError("conv kernel must be 1x1 or 3x3, got " + weight.shape().str());
  }
  if (weight.dim(0) % groups != 0) {
    throw ShapeError("conv: c_out " + std::to_string(weight.dim(0)) + " not divisible by groups " +
                     std::to_string(groups));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0))) {
    throw ShapeError("conv bias must be [c_out]");
  }
}

template <typename T>
void BasicBatchNormParams<T>::validate() const {
  const auto c = gamma.size();
  if (c == 0 || beta.size() != c || running_mean.size() != c || running_var.size() != c) {
    throw ShapeError("batchnorm parameter vectors must share one non-zero length");
  }
  if (!(epsilon > T(0))) throw ShapeError("batchnorm epsilon must be positive");
  for (auto v : running_var) {
    if (!(v + epsilon > T(0))) throw NumericError("batchnorm running_var + epsilon must be positive");
  }
}

template <typename T>
BasicBatchNormParams<T> BasicBatchNormParams<T>::identity(std::int64_t channels) {
  BasicBatchNormParams bn;
  const auto c = static_cast<size_t>(channels);
  bn.gamma.assign(c, T(1));
  bn.beta.assign(c, T(0));
  bn.running_mean.assign(c, T(0));
  bn.running_var.assign(c, T(1));
  return bn;
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicConvParams<T>& p) {
  require_rank4(x.shape(), "conv2d");
  p.validate();
  const idx n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c_in != p.c_in()) {
    throw ShapeError("conv2d: input has " + std::to_string(c_in) + " channels, weight expects " +
                     std::to_string(p.c_in()) + " (groups " + std::to_string(p.groups) + ")");
  }
  const idx k = p.kernel();
  if (h + 2 * p.padding < k || w + 2 * p.padding < k) {
    throw ShapeError("conv2d: spatial size " + x.shape().str() + " smaller than kernel");
  }
  kernels::ConvGeometry geo{c_in / p.groups, h, w, k, p.stride, p.padding,
                            (h + 2 * p.padding - k) / p.stride + 1, (w + 2 * p.padding - k) / p.stride + 1};
  const idx c_out = p.c_out();
  const idx cout_g = c_out / p.groups;
  const idx spatial = geo.col_cols();
  BasicTensor<T> y(Shape{n, c_out, geo.out_h, geo.out_w});

  // Images are laid side by side along the GEMM's N dimension so that small
  // feature maps still fill whole register tiles.
  const bool pointwise = kernels::is_pointwise(geo);
  const idx cols = n * spatial;
  const idx rows = geo.col_rows();
  std::vector<T> col(static_cast<size_t>(rows * cols));
  std::vector<T> out(static_cast<size_t>(cout_g * cols));
  const T* wptr = p.weight.ptr();
  for (idx g = 0; g < p.groups; ++g) {
    for (idx b = 0; b < n; ++b) {
      const T* xg = x.ptr() + (b * c_in + g * geo.channels) * h * w;
      if (pointwise) {
        for (idx r = 0; r < rows; ++r) std::copy_n(xg + r * spatial, spatial, col.data() + r * cols + b * spatial);
      } else {
        kernels::im2col(geo, xg, col.data() + b * spatial, cols);
      }
    }
    kernels::gemm(cout_g, cols, rows, wptr + g * cout_g * rows, rows, col.data(), cols, out.data(), cols, false);
    for (idx b = 0; b < n; ++b) {
      for (idx o = 0; o < cout_g; ++o) {
        const idx oc = g * cout_g + o;
        T* yo = y.ptr() + (b * c_out + oc) * spatial;
        const T* src = out.data() + o * cols + b * spatial;
        if (p.bias) {
          const T bv = (*p.bias)[oc];
          for (idx i = 0; i < spatial; ++i) yo[i] = src[i] + bv;
        } else {
          std::copy_n(src, spatial, yo);
        }
      }
    }
  }
  PARNET_DEBUG_CHECK_FINITE(y, "conv2d");
  return y;
}

template <typename T>
BasicTensor<T> batchnorm_eval(const BasicTensor<T>& x, const BasicBatchNormParams<T>& bn) {
  require_rank4(x.shape(), "batchnorm_eval");
  bn.validate();
  const idx n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != bn.channels()) {
    throw ShapeError("batchnorm_eval: input has " + std::to_string(c) + " channels, params have " +
                     std::to_string(bn.channels()));
  }
  BasicTensor<T> y(x.shape());
  for (idx ch = 0; ch < c; ++ch) {
    const T scale = bn.gamma[ch] / std::sqrt(bn.running_var[ch] + bn.epsilon);
    const T mean = bn.running_mean[ch];
    const T beta = bn.beta[ch];
    for (idx b = 0; b < n; ++b) {
      const T* src = x.ptr() + (b * c + ch) * hw;
      T* dst = y.ptr() + (b * c + ch) * hw;
      for (idx i = 0; i < hw; ++i) dst[i] = scale * (src[i] - mean) + beta;
    }
  }
  return y;
}

template <typename T>
BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>& x, const BasicBatchNormParams<T>& bn, T momentum) {
  require_rank4(x.shape(), "batchnorm_train");
  bn.validate();
  const idx n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c != bn.channels()) throw ShapeError("batchnorm_train: channel mismatch");
  const idx count = n * hw;
  if (count < 2) throw NumericError("batchnorm_train: degenerate batch, need at least 2 values per channel");

  BatchNormTrainResult<T> r{BasicTensor<T>(x.shape()), std::vector<T>(c), std::vector<T>(c), bn};
  for (idx ch = 0; ch < c; ++ch) {
    double sum = 0;
    for (idx b = 0; b < n; ++b) {
      const T* src = x.ptr() + (b * c + ch) * hw;
      for (idx i = 0; i < hw; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0;
    for (idx b = 0; b < n; ++b) {
      const T* src = x.ptr() + (b * c + ch) * hw;
      for (idx i = 0; i < hw; ++i) {
        const double d = src[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / static_cast<double>(count);
    r.batch_mean[ch] = static_cast<T>(mean);
    r.batch_var[ch] = static_cast<T>(var);
    const T inv = T(1) / std::sqrt(static_cast<T>(var) + bn.epsilon);
    const T scale = bn.gamma[ch] * inv;
    for (idx b = 0; b < n; ++b) {
      const T* src = x.ptr() + (b * c + ch) * hw;
      T* dst = r.y.ptr() + (b * c + ch) * hw;
      for (idx i = 0; i < hw; ++i) dst[i] = scale * (src[i] - static_cast<T>(mean)) + bn.beta[ch];
    }
    r.updated.running_mean[ch] = (T(1) - momentum) * bn.running_mean[ch] + momentum * static_cast<T>(mean);
    r.updated.running_var[ch] = (T(1) - momentum) * bn.running_var[ch] + momentum * static_cast<T>(var);
  }
  return r;
}

template <typename T>
BasicTensor<T> activation(Activation kind, const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  const T* src = x.ptr();
  T* dst = y.ptr();
  const idx n = x.numel();
  switch (kind) {
    case Activation::kSilu:
      for (idx i = 0; i < n; ++i) dst[i] = silu(src[i]);
      break;
    case Activation::kSigmoid:
      for (idx i = 0; i < n; ++i) dst[i] = sigmoid(src[i]);
      break;
    case Activation::kRelu:
      for (idx i = 0; i < n; ++i) dst[i] = std::max(src[i], T(0));
      break;
  }
  return y;
}

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& x) {
  require_rank4(x.shape(), "avg_pool2d");
  const idx n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("avg_pool2d: odd spatial dims " + x.shape().str());
  const idx oh = h / 2, ow = w / 2;
  BasicTensor<T> y(Shape{n, c, oh, ow});
  for (idx plane = 0; plane < n * c; ++plane) {
    const T* src = x.ptr() + plane * h * w;
    T* dst = y.ptr() + plane * oh * ow;
    for (idx i = 0; i < oh; ++i) {
      const T* r0 = src + 2 * i * w;
      const T* r1 = r0 + w;
      for (idx j = 0; j < ow; ++j) {
        dst[i * ow + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
      }
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_rank4(x.shape(), "global_avg_pool");
  const idx n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  BasicTensor<T> y(Shape{n, c, 1, 1});
  for (idx plane = 0; plane < n * c; ++plane) {
    const T* src = x.ptr() + plane * hw;
    T s = 0;
    for (idx i = 0; i < hw; ++i) s += src[i];
    y[plane] = s / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  const idx n = x.dim(0);
  const idx c_in = x.numel() / n;
  if (w.rank() != 2 || w.dim(1) != c_in) {
    throw ShapeError("linear: input " + x.shape().str() + " does not conform to weight " + w.shape().str());
  }
  const idx c_out = w.dim(0);
  if (b.numel() != c_out) throw ShapeError("linear: bias length must equal c_out");
  BasicTensor<T> y(Shape{n, c_out});
  for (idx r = 0; r < n; ++r) {
    const T* xr = x.ptr() + r * c_in;
    for (idx o = 0; o < c_out; ++o) {
      const T* wo = w.ptr() + o * c_in;
      T s = 0;
      for (idx i = 0; i < c_in; ++i) s += xr[i] * wo[i];
      y[r * c_out + o] = s + b[o];
    }
  }
  return y;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank4(a.shape(), "concat_channels");
  require_rank4(b.shape(), "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  const idx n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  BasicTensor<T> y(Shape{n, ca + cb, a.dim(2), a.dim(3)});
  for (idx i = 0; i < n; ++i) {
    std::memcpy(y.ptr() + i * (ca + cb) * hw, a.ptr() + i * ca * hw, sizeof(T) * ca * hw);
    std::memcpy(y.ptr() + (i * (ca + cb) + ca) * hw, b.ptr() + i * cb * hw, sizeof(T) * cb * hw);
  }
  return y;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::int64_t begin, std::int64_t count) {
  require_rank4(x.shape(), "slice_channels");
  const idx n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (begin < 0 || count <= 0 || begin + count > c) throw ShapeError("slice_channels: range out of bounds");
  BasicTensor<T> y(Shape{n, count, x.dim(2), x.dim(3)});
  for (idx i = 0; i < n; ++i) {
    std::memcpy(y.ptr() + i * count * hw, x.ptr() + (i * c + begin) * hw, sizeof(T) * count * hw);
  }
  return y;
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  BasicTensor<T> y(a.shape());
  if (a.shape() == b.shape()) {
    const idx n = a.numel();
    if (op == ElementwiseOp::kAdd) {
      for (idx i = 0; i < n; ++i) y[i] = a[i] + b[i];
    } else {
      for (idx i = 0; i < n; ++i) y[i] = a[i] * b[i];
    }
    return y;
  }
  if (a.rank() == 4 && b.rank() == 4 && b.dim(0) == a.dim(0) && b.dim(1) == a.dim(1) && b.dim(2) == 1 &&
      b.dim(3) == 1) {
    const idx planes = a.dim(0) * a.dim(1), hw = a.dim(2) * a.dim(3);
    for (idx p = 0; p < planes; ++p) {
      const T s = b[p];
      const T* src = a.ptr() + p * hw;
      T* dst = y.ptr() + p * hw;
      if (op == ElementwiseOp::kAdd) {
        for (idx i = 0; i < hw; ++i) dst[i] = src[i] + s;
      } else {
        for (idx i = 0; i < hw; ++i) dst[i] = src[i] * s;
      }
    }
    return y;
  }
  throw ShapeError("elementwise: incompatible dims " + a.shape().str() + " and " + b.shape().str());
}

#define PARNET_INSTANTIATE_OPS(T)                                                                   \
  template struct BasicConvParams<T>;                                                               \
  template struct BasicBatchNormParams<T>;                                                          \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicConvParams<T>&);                 \
  template BasicTensor<T> batchnorm_eval(const BasicTensor<T>&, const BasicBatchNormParams<T>&);    \
  template BatchNormTrainResult<T> batchnorm_train(const BasicTensor<T>&, const BasicBatchNormParams<T>&, T); \
  template BasicTensor<T> activation(Activation, const BasicTensor<T>&);                            \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&);                                        \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                   \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::int64_t, std::int64_t);        \
  template BasicTensor<T> elementwise(ElementwiseOp, const BasicTensor<T>&, const BasicTensor<T>&);

PARNET_INSTANTIATE_OPS(float)
PARNET_INSTANTIATE_OPS(double)

#undef PARNET_INSTANTIATE_OPS

}  // namespace parnet
