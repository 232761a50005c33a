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

// Internal dense kernels shared by the forward operators and their gradients.
// gemm() sums each output element over fixed K blocks in ascending order, so
// results depend only on the problem shape, never on threads or timing.

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <vector>

namespace parnet::kernels {

using idx = std::int64_t;

namespace detail {

// acc[r][j] = sum_k ap[k][r] * bp[k][j] over packed, zero-padded panels.
template <typename T, int MR, int NR>
inline void micro_tile(idx K, const T* ap, const T* bp, T* c, idx ldc, idx mr, idx nr, bool accumulate) {
  T acc[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < NR; ++j) acc[r][j] = T(0);
  for (idx k = 0; k < K; ++k) {
    const T* brow = bp + k * NR;
    const T* acol = ap + k * MR;
    for (int r = 0; r < MR; ++r) {
      const T av = acol[r];
      for (int j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (idx r = 0; r < mr; ++r) {
    T* crow = c + r * ldc;
    if (accumulate) {
      for (idx j = 0; j < nr; ++j) crow[j] += acc[r][j];
    } else {
      for (idx j = 0; j < nr; ++j) crow[j] = acc[r][j];
    }
  }
}

}  // namespace detail

/// C[M,N] (+)= A[M,K] * B[K,N], all row-major.
template <typename T>
void gemm(idx M, idx N, idx K, const T* a, idx lda, const T* b, idx ldb, T* c, idx ldc, bool accumulate) {
  constexpr int MR = 6;
  constexpr int NR = sizeof(T) == 4 ? 32 : 16;
  constexpr idx KC = 256;
  if (M <= 0 || N <= 0) return;
  if (K == 0) {
    if (!accumulate) {
      for (idx i = 0; i < M; ++i) std::fill(c + i * ldc, c + i * ldc + N, T(0));
    }
    return;
  }
  const idx m_blocks = (M + MR - 1) / MR;
  std::vector<T> apack(static_cast<size_t>(m_blocks * MR * std::min(K, KC)));
  std::vector<T> bpack(static_cast<size_t>(NR * std::min(K, KC)));
  for (idx k0 = 0; k0 < K; k0 += KC) {
    const idx kc = std::min(KC, K - k0);
    for (idx ib = 0; ib < m_blocks; ++ib) {
      T* dst = apack.data() + ib * MR * kc;
      const idx mr = std::min<idx>(MR, M - ib * MR);
      for (idx r = 0; r < MR; ++r) {
        if (r >= mr) {
          for (idx k = 0; k < kc; ++k) dst[k * MR + r] = T(0);
          continue;
        }
        const T* src = a + (ib * MR + r) * lda + k0;
        for (idx k = 0; k < kc; ++k) dst[k * MR + r] = src[k];
      }
    }
    const bool acc = accumulate || k0 > 0;
    for (idx j = 0; j < N; j += NR) {
      const idx nr = std::min<idx>(NR, N - j);
      for (idx k = 0; k < kc; ++k) {
        T* dst = bpack.data() + k * NR;
        std::memcpy(dst, b + (k0 + k) * ldb + j, static_cast<size_t>(nr) * sizeof(T));
        std::fill(dst + nr, dst + NR, T(0));
      }
      for (idx ib = 0; ib < m_blocks; ++ib) {
        const idx mr = std::min<idx>(MR, M - ib * MR);
        detail::micro_tile<T, MR, NR>(kc, apack.data() + ib * MR * kc, bpack.data(), c + ib * MR * ldc + j, ldc, mr,
                                      nr, acc);
      }
    }
  }
}

/// dst[cols, rows] = src[rows, cols]^T
template <typename T>
void transpose(idx rows, idx cols, const T* src, T* dst) {
  constexpr idx B = 32;
  for (idx i0 = 0; i0 < rows; i0 += B) {
    for (idx j0 = 0; j0 < cols; j0 += B) {
      const idx i1 = std::min(rows, i0 + B);
      const idx j1 = std::min(cols, j0 + B);
      for (idx i = i0; i < i1; ++i)
        for (idx j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

struct ConvGeometry {
  idx channels;  // input channels of one group
  idx height, width;
  idx kernel, stride, padding;
  idx out_h, out_w;

  idx col_rows() const { return channels * kernel * kernel; }
  idx col_cols() const { return out_h * out_w; }
};

/// Output columns [lo, hi) whose input column ox*stride - padding + kx lies inside [0, width).
inline void valid_columns(const ConvGeometry& g, idx kx, idx& lo, idx& hi) {
  const idx first = g.padding - kx;  // smallest ox*stride that is in range
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const idx last = g.width - 1 + g.padding - kx;
  hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
  lo = std::min(lo, hi);
}

/// Unfolds one group of one image [channels, H, W] into [channels*k*k, out_h*out_w]
/// with row stride `ld` (defaults to out_h*out_w).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col, idx ld = 0) {
  const idx cols = ld > 0 ? ld : g.col_cols();
  for (idx c = 0; c < g.channels; ++c) {
    const T* xc = x + c * g.height * g.width;
    for (idx ky = 0; ky < g.kernel; ++ky) {
      for (idx kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        idx lo, hi;
        valid_columns(g, kx, lo, hi);
        for (idx oy = 0; oy < g.out_h; ++oy) {
          const idx iy = oy * g.stride - g.padding + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.out_w, T(0));
          const T* src = xc + iy * g.width - g.padding + kx;
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (idx ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters-and-adds col back into x.
template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* x, idx ld = 0) {
  const idx cols = ld > 0 ? ld : g.col_cols();
  for (idx c = 0; c < g.channels; ++c) {
    T* xc = x + c * g.height * g.width;
    for (idx ky = 0; ky < g.kernel; ++ky) {
      for (idx kx = 0; kx < g.kernel; ++kx) {
        const T* row = col + ((c * g.kernel + ky) * g.kernel + kx) * cols;
        idx lo, hi;
        valid_columns(g, kx, lo, hi);
        for (idx oy = 0; oy < g.out_h; ++oy) {
          const idx iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* dst = xc + iy * g.width - g.padding + kx;
          const T* src = row + oy * g.out_w;
          for (idx ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace parnet::kernels
