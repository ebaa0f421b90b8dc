// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

namespace realise::nn::kernels {

/// C[m x n] (+)= op(A) * op(B), all row-major. op(A) is m x k; when trans_a
/// the stored A is k x m. op(B) is k x n; when trans_b the stored B is n x k.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> bt;
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      const T* src = b + j * k;
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = src[p];
    }
    b = bt.data();
  }
  if (!trans_a) {
    for (std::size_t i = 0; i < m; ++i) {
      T* ci = c + i * n;
      const T* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = ai[p];
        if (av == T{0}) continue;
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  } else {
    for (std::size_t p = 0; p < k; ++p) {
      const T* ap = a + p * m;
      const T* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = ap[i];
        if (av == T{0}) continue;
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  }
}

/// Unfolds one C x H x W image into a (C*kh*kw) x (Ho*Wo) column block.
/// Rows of the destination are `ld` apart so a batch can share one matrix.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* cols, std::size_t ld) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((c * kh + ky) * kw + kx) * ld;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(height) &&
                                ix < static_cast<long>(width);
            row[oy * out_w + ox] = inside ? img[(c * height + iy) * width + ix] : T{0};
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters column gradients back into the image gradient.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* img, std::size_t ld) {
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((c * kh + ky) * kw + kx) * ld;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(width)) continue;
            img[(c * height + iy) * width + ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace realise::nn::kernels
