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

#include "parnet/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "kernels.hpp"

namespace parnet::ad {

namespace {

using idx = std::int64_t;

template <typename T>
void add_into(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  T* d = dst.ptr();
  const T* s = src.ptr();
  for (idx i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <typename T>
BasicTensor<T> vector_tensor(const std::vector<T>& v) {
  return BasicTensor<T>(Shape{static_cast<idx>(v.size())}, v);
}

template <typename T>
std::vector<T> tensor_vector(const BasicTensor<T>& t) {
  return std::vector<T>(t.data().begin(), t.data().end());
}

// Gradients of y = conv(x, w) (bias handled by the caller). Null outputs are skipped.
template <typename T>
void conv_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, int stride, int padding, int groups,
                   const BasicTensor<T>& gy, BasicTensor<T>* gx, BasicTensor<T>* gw) {
  const idx n = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const idx c_out = w.dim(0), k = w.dim(2);
  kernels::ConvGeometry geo{c_in / groups, h, wd, k, stride, padding, gy.dim(2), gy.dim(3)};
  const idx cout_g = c_out / groups;
  const idx spatial = geo.col_cols();
  const idx cols = n * spatial;
  const idx rows = geo.col_rows();
  const bool pointwise = kernels::is_pointwise(geo);

  std::vector<T> col(static_cast<size_t>(rows * cols));
  std::vector<T> colt(gw ? static_cast<size_t>(rows * cols) : 0);
  std::vector<T> gyg(static_cast<size_t>(cout_g * cols));
  std::vector<T> wt(gx ? static_cast<size_t>(rows * cout_g) : 0);
  std::vector<T> gcol(gx ? static_cast<size_t>(rows * cols) : 0);

  for (idx g = 0; g < groups; ++g) {
    for (idx b = 0; b < n; ++b) {
      for (idx o = 0; o < cout_g; ++o) {
        std::copy_n(gy.ptr() + (b * c_out + g * cout_g + o) * spatial, spatial, gyg.data() + o * cols + b * spatial);
      }
    }
    if (gw) {
      for (idx b = 0; b < n; ++b) {
        const T* xg = x.ptr() + (b * c_in + g * geo.channels) * h * wd;
        if (pointwise) {
          for (idx r = 0; r < rows; ++r) std::copy_n(xg + r * spatial, spatial, col.data() + r * cols + b * spatial);
        } else {
          kernels::im2col(geo, xg, col.data() + b * spatial, cols);
        }
      }
      kernels::transpose(rows, cols, col.data(), colt.data());
      kernels::gemm(cout_g, rows, cols, gyg.data(), cols, colt.data(), rows, gw->ptr() + g * cout_g * rows, rows,
                    false);
    }
    if (gx) {
      kernels::transpose(cout_g, rows, w.ptr() + g * cout_g * rows, wt.data());
      kernels::gemm(rows, cols, cout_g, wt.data(), cout_g, gyg.data(), cols, gcol.data(), cols, false);
      for (idx b = 0; b < n; ++b) {
        T* xg = gx->ptr() + (b * c_in + g * geo.channels) * h * wd;
        if (pointwise) {
          for (idx r = 0; r < rows; ++r) {
            const T* src = gcol.data() + r * cols + b * spatial;
            T* dst = xg + r * spatial;
            for (idx i = 0; i < spatial; ++i) dst[i] += src[i];
          }
        } else {
          kernels::col2im_add(geo, gcol.data() + b * spatial, xg, cols);
        }
      }
    }
  }
}

bool is_channel_broadcast(const Shape& a, const Shape& b) {
  return a.rank() == 4 && b.rank() == 4 && b[0] == a[0] && b[1] == a[1] && b[2] == 1 && b[3] == 1 &&
         (a[2] != 1 || a[3] != 1);
}

// Sums a [n, c, h, w] tensor over space into [n, c, 1, 1].
template <typename T>
BasicTensor<T> sum_spatial(const BasicTensor<T>& t) {
  const idx n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  BasicTensor<T> out(Shape{n, c, 1, 1});
  for (idx i = 0; i < n * c; ++i) {
    T s = 0;
    for (idx j = 0; j < hw; ++j) s += t[i * hw + j];
    out[i] = s;
  }
  return out;
}

}  // namespace

template <typename T>
Var Tape<T>::push(TensorT value, std::initializer_list<Var> inputs, std::function<void(const TensorT&)> back) {
  Entry e;
  e.value = std::move(value);
  for (Var v : inputs) e.requires_grad = e.requires_grad || needs(v);
  if (e.requires_grad) e.back = std::move(back);
  entries_.push_back(std::move(e));
  return static_cast<Var>(entries_.size() - 1);
}

template <typename T>
void Tape<T>::accumulate(Var v, const TensorT& g) {
  if (!needs(v)) return;
  auto& e = entries_[static_cast<size_t>(v)];
  if (g.shape() != e.value.shape()) {
    throw std::logic_error("gradient shape " + g.shape().str() + " does not match value " + e.value.shape().str());
  }
  if (!e.has_grad) {
    e.grad = g;
    e.has_grad = true;
  } else {
    add_into(e.grad, g);
  }
}

template <typename T>
Var Tape<T>::leaf(TensorT value, bool requires_grad) {
  Entry e;
  e.value = std::move(value);
  e.requires_grad = requires_grad;
  entries_.push_back(std::move(e));
  return static_cast<Var>(entries_.size() - 1);
}

template <typename T>
Var Tape<T>::leaf(const std::vector<T>& values, bool requires_grad) {
  return leaf(vector_tensor(values), requires_grad);
}

template <typename T>
typename Tape<T>::TensorT Tape<T>::grad(Var v) const {
  const auto& e = entries_.at(static_cast<size_t>(v));
  return e.has_grad ? e.grad : TensorT(e.value.shape());
}

template <typename T>
void Tape<T>::backward(Var root, T seed) {
  if (value(root).numel() != 1) throw ShapeError("backward needs a scalar root, got " + value(root).shape().str());
  for (auto& e : entries_) {
    e.grad = TensorT();
    e.has_grad = false;
  }
  accumulate(root, TensorT(value(root).shape(), seed));
  for (Var v = root; v >= 0; --v) {
    auto& e = entries_[static_cast<size_t>(v)];
    if (!e.has_grad || !e.back) continue;
    const TensorT g = e.grad;
    e.back(g);
  }
}

template <typename T>
Var Tape<T>::conv2d(Var x, Var weight, int stride, int padding, int groups, Var bias) {
  BasicConvParams<T> p;
  p.weight = value(weight);
  if (bias >= 0) p.bias = value(bias);
  p.stride = stride;
  p.padding = padding;
  p.groups = groups;
  TensorT y = parnet::conv2d(value(x), p);
  return push(std::move(y), {x, weight, bias}, [=, this](const TensorT& gy) {
    TensorT gx, gw;
    const bool need_x = needs(x), need_w = needs(weight);
    if (need_x) gx = TensorT(value(x).shape());
    if (need_w) gw = TensorT(value(weight).shape());
    conv_backward(value(x), value(weight), stride, padding, groups, gy, need_x ? &gx : nullptr,
                  need_w ? &gw : nullptr);
    if (need_x) accumulate(x, gx);
    if (need_w) accumulate(weight, gw);
    if (needs(bias)) {
      const auto s = sum_spatial(gy);
      const idx n = gy.dim(0), c = gy.dim(1);
      TensorT gb(Shape{c});
      for (idx b = 0; b < n; ++b)
        for (idx o = 0; o < c; ++o) gb[o] += s[b * c + o];
      accumulate(bias, gb);
    }
  });
}

template <typename T>
Var Tape<T>::batchnorm_train(Var x, Var gamma, Var beta, T epsilon, std::vector<T>* batch_mean,
                             std::vector<T>* batch_var) {
  BasicBatchNormParams<T> bn;
  bn.gamma = tensor_vector(value(gamma));
  bn.beta = tensor_vector(value(beta));
  bn.running_mean.assign(bn.gamma.size(), T(0));
  bn.running_var.assign(bn.gamma.size(), T(1));
  bn.epsilon = epsilon;
  auto r = parnet::batchnorm_train(value(x), bn, T(0));
  if (batch_mean) *batch_mean = r.batch_mean;
  if (batch_var) *batch_var = r.batch_var;
  std::vector<T> mean = r.batch_mean, var = r.batch_var;
  return push(std::move(r.y), {x, gamma, beta}, [=, this](const TensorT& gy) {
    const TensorT& xv = value(x);
    const idx n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    const double count = static_cast<double>(n * hw);
    TensorT gx(xv.shape()), gg(Shape{c}), gb(Shape{c});
    for (idx ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(var[ch]) + static_cast<double>(epsilon));
      double sum_g = 0, sum_gx = 0;
      for (idx b = 0; b < n; ++b) {
        const T* xs = xv.ptr() + (b * c + ch) * hw;
        const T* gs = gy.ptr() + (b * c + ch) * hw;
        for (idx i = 0; i < hw; ++i) {
          sum_g += gs[i];
          sum_gx += gs[i] * (xs[i] - mean[ch]) * inv;
        }
      }
      gg[ch] = static_cast<T>(sum_gx);
      gb[ch] = static_cast<T>(sum_g);
      const double scale = static_cast<double>(value(gamma)[ch]) * inv / count;
      for (idx b = 0; b < n; ++b) {
        const T* xs = xv.ptr() + (b * c + ch) * hw;
        const T* gs = gy.ptr() + (b * c + ch) * hw;
        T* out = gx.ptr() + (b * c + ch) * hw;
        for (idx i = 0; i < hw; ++i) {
          const double xhat = (xs[i] - mean[ch]) * inv;
          out[i] = static_cast<T>(scale * (count * gs[i] - sum_g - xhat * sum_gx));
        }
      }
    }
    accumulate(x, gx);
    accumulate(gamma, gg);
    accumulate(beta, gb);
  });
}

template <typename T>
Var Tape<T>::batchnorm_eval(Var x, Var gamma, Var beta, const std::vector<T>& mean, const std::vector<T>& var,
                            T epsilon) {
  BasicBatchNormParams<T> bn;
  bn.gamma = tensor_vector(value(gamma));
  bn.beta = tensor_vector(value(beta));
  bn.running_mean = mean;
  bn.running_var = var;
  bn.epsilon = epsilon;
  return push(parnet::batchnorm_eval(value(x), bn), {x, gamma, beta}, [=, this](const TensorT& gy) {
    const TensorT& xv = value(x);
    const idx n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    TensorT gx(xv.shape()), gg(Shape{c}), gb(Shape{c});
    for (idx ch = 0; ch < c; ++ch) {
      const T inv = T(1) / std::sqrt(var[ch] + epsilon);
      const T k = value(gamma)[ch] * inv;
      for (idx b = 0; b < n; ++b) {
        const idx off = (b * c + ch) * hw;
        for (idx i = 0; i < hw; ++i) {
          gx[off + i] = gy[off + i] * k;
          gg[ch] += gy[off + i] * (xv[off + i] - mean[ch]) * inv;
          gb[ch] += gy[off + i];
        }
      }
    }
    accumulate(x, gx);
    accumulate(gamma, gg);
    accumulate(beta, gb);
  });
}

template <typename T>
Var Tape<T>::activation(Activation kind, Var x) {
  return push(parnet::activation(kind, value(x)), {x}, [=, this](const TensorT& gy) {
    const TensorT& xv = value(x);
    TensorT gx(xv.shape());
    for (idx i = 0; i < xv.numel(); ++i) {
      const T v = xv[i];
      T d;
      switch (kind) {
        case Activation::kSilu: {
          const T s = parnet::sigmoid(v);
          d = s * (T(1) + v * (T(1) - s));
          break;
        }
        case Activation::kSigmoid: {
          const T s = parnet::sigmoid(v);
          d = s * (T(1) - s);
          break;
        }
        default: d = v > T(0) ? T(1) : T(0);
      }
      gx[i] = gy[i] * d;
    }
    accumulate(x, gx);
  });
}

template <typename T>
Var Tape<T>::avg_pool2d(Var x) {
  return push(parnet::avg_pool2d(value(x)), {x}, [=, this](const TensorT& gy) {
    const Shape& s = value(x).shape();
    TensorT gx(s);
    const idx oh = gy.dim(2), ow = gy.dim(3);
    for (idx p = 0; p < s[0] * s[1]; ++p) {
      for (idx i = 0; i < oh; ++i) {
        for (idx j = 0; j < ow; ++j) {
          const T g = gy[(p * oh + i) * ow + j] / T(4);
          for (idx di = 0; di < 2; ++di)
            for (idx dj = 0; dj < 2; ++dj) gx[(p * s[2] + 2 * i + di) * s[3] + 2 * j + dj] = g;
        }
      }
    }
    accumulate(x, gx);
  });
}

template <typename T>
Var Tape<T>::global_avg_pool(Var x) {
  return push(parnet::global_avg_pool(value(x)), {x}, [=, this](const TensorT& gy) {
    const Shape& s = value(x).shape();
    const idx hw = s[2] * s[3];
    TensorT gx(s);
    for (idx p = 0; p < s[0] * s[1]; ++p) {
      const T g = gy[p] / static_cast<T>(hw);
      std::fill(gx.ptr() + p * hw, gx.ptr() + (p + 1) * hw, g);
    }
    accumulate(x, gx);
  });
}

template <typename T>
Var Tape<T>::linear(Var x, Var weight, Var bias) {
  return push(parnet::linear(value(x), value(weight), value(bias)), {x, weight, bias}, [=, this](const TensorT& gy) {
    const TensorT& xv = value(x);
    const TensorT& wv = value(weight);
    const idx n = xv.dim(0), c_in = wv.dim(1), c_out = wv.dim(0);
    if (needs(x)) {
      TensorT gx(xv.shape());
      kernels::gemm(n, c_in, c_out, gy.ptr(), c_out, wv.ptr(), c_in, gx.ptr(), c_in, false);
      accumulate(x, gx);
    }
    if (needs(weight)) {
      std::vector<T> gyt(static_cast<size_t>(n * c_out));
      kernels::transpose(n, c_out, gy.ptr(), gyt.data());
      TensorT gw(wv.shape());
      kernels::gemm(c_out, c_in, n, gyt.data(), n, xv.ptr(), c_in, gw.ptr(), c_in, false);
      accumulate(weight, gw);
    }
    if (needs(bias)) {
      TensorT gb(value(bias).shape());
      for (idx r = 0; r < n; ++r)
        for (idx o = 0; o < c_out; ++o) gb[o] += gy[r * c_out + o];
      accumulate(bias, gb);
    }
  });
}

template <typename T>
Var Tape<T>::concat_channels(Var a, Var b) {
  return push(parnet::concat_channels(value(a), value(b)), {a, b}, [=, this](const TensorT& gy) {
    const idx ca = value(a).dim(1), cb = value(b).dim(1);
    accumulate(a, parnet::slice_channels(gy, 0, ca));
    accumulate(b, parnet::slice_channels(gy, ca, cb));
  });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  return push(parnet::elementwise(ElementwiseOp::kAdd, value(a), value(b)), {a, b}, [=, this](const TensorT& gy) {
    accumulate(a, gy);
    if (needs(b)) accumulate(b, is_channel_broadcast(value(a).shape(), value(b).shape()) ? sum_spatial(gy) : gy);
  });
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  return push(parnet::elementwise(ElementwiseOp::kMul, value(a), value(b)), {a, b}, [=, this](const TensorT& gy) {
    if (needs(a)) accumulate(a, parnet::elementwise(ElementwiseOp::kMul, gy, value(b)));
    if (needs(b)) {
      TensorT prod = parnet::elementwise(ElementwiseOp::kMul, gy, value(a));
      accumulate(b, is_channel_broadcast(value(a).shape(), value(b).shape()) ? sum_spatial(prod) : prod);
    }
  });
}

template <typename T>
Var Tape<T>::scale(Var x, T s) {
  TensorT y = value(x);
  for (auto& v : y.data()) v *= s;
  return push(std::move(y), {x}, [=, this](const TensorT& gy) {
    TensorT gx = gy;
    for (auto& v : gx.data()) v *= s;
    accumulate(x, gx);
  });
}

template <typename T>
Var Tape<T>::sum(Var x) {
  T s = 0;
  for (T v : value(x).data()) s += v;
  return push(TensorT(Shape{1}, s), {x}, [=, this](const TensorT& gy) {
    accumulate(x, TensorT(value(x).shape(), gy[0]));
  });
}

template <typename T>
Var Tape<T>::label_smooth_ce(Var logits, const std::vector<int>& labels, T eps) {
  const TensorT& z = value(logits);
  if (z.rank() != 2) throw ShapeError("label_smooth_ce expects [n, K] logits, got " + z.shape().str());
  const idx n = z.dim(0), classes = z.dim(1);
  if (static_cast<idx>(labels.size()) != n) throw ShapeError("label_smooth_ce: one label per row required");
  if (!(eps >= T(0) && eps < T(1))) throw std::invalid_argument("label smoothing eps must lie in [0, 1)");
  for (int l : labels) {
    if (l < 0 || l >= classes) {
      throw std::out_of_range("label " + std::to_string(l) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  // Rows of softmax probabilities and smoothed targets, kept for backward.
  TensorT prob(z.shape()), target(z.shape(), eps / static_cast<T>(classes));
  double loss = 0;
  for (idx r = 0; r < n; ++r) {
    const T* row = z.ptr() + r * classes;
    const T m = *std::max_element(row, row + classes);
    double se = 0;
    for (idx k = 0; k < classes; ++k) se += std::exp(static_cast<double>(row[k] - m));
    const double lse = static_cast<double>(m) + std::log(se);
    target[r * classes + labels[static_cast<size_t>(r)]] += T(1) - eps;
    for (idx k = 0; k < classes; ++k) {
      prob[r * classes + k] = static_cast<T>(std::exp(static_cast<double>(row[k]) - lse));
      loss -= static_cast<double>(target[r * classes + k]) * (static_cast<double>(row[k]) - lse);
    }
  }
  return push(TensorT(Shape{1}, static_cast<T>(loss / static_cast<double>(n))), {logits},
              [=, this](const TensorT& gy) {
                TensorT g(prob.shape());
                for (idx i = 0; i < g.numel(); ++i) g[i] = gy[0] * (prob[i] - target[i]) / static_cast<T>(n);
                accumulate(logits, g);
              });
}

template class Tape<float>;
template class Tape<double>;

}  // namespace parnet::ad
