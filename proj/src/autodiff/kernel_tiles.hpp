#pragma once

// Tile bodies shared by the serial and OpenMP kernel backends. Keeping a single
// definition is what makes the two backends bit-identical.

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "tml/kernels.hpp"

namespace tml::kernels::detail {

inline constexpr std::int64_t kRowBlock = 4;
inline constexpr std::int64_t kColBlock = 128;

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct GemmTiling {
  std::int64_t row_tiles;
  std::int64_t col_tiles;
  std::int64_t count() const { return row_tiles * col_tiles; }
};

inline GemmTiling tiling(const GemmShape& s) {
  return {ceil_div(s.m, kRowBlock), ceil_div(s.n, kColBlock)};
}

inline constexpr std::int64_t kTransposeBlock = 32;

// Row-major transpose of a rows x cols matrix into dst (cols x rows),
// restricted to the source row band [band * kTransposeBlock, ...). Walks
// square sub-blocks so both sides stay cache-resident.
template <typename T>
void transpose_band(const T* src, T* dst, std::int64_t rows, std::int64_t cols, std::int64_t band) {
  const std::int64_t r0 = band * kTransposeBlock;
  const std::int64_t r1 = std::min(rows, r0 + kTransposeBlock);
  for (std::int64_t c0 = 0; c0 < cols; c0 += kTransposeBlock) {
    const std::int64_t c1 = std::min(cols, c0 + kTransposeBlock);
    for (std::int64_t r = r0; r < r1; ++r) {
      const T* s = src + r * cols;
      for (std::int64_t c = c0; c < c1; ++c) dst[c * rows + r] = s[c];
    }
  }
}

inline std::int64_t transpose_bands(std::int64_t rows) { return ceil_div(rows, kTransposeBlock); }

// C tile = (C +) A[m x k] * B[k x n] for rows [i0, i0+4) and cols [j0, j0+kColBlock).
template <typename T>
void gemm_tile(const GemmShape& s, const T* __restrict a, const T* __restrict b, T* __restrict c,
               std::int64_t tile) {
  const auto t = tiling(s);
  const std::int64_t i0 = (tile / t.col_tiles) * kRowBlock;
  const std::int64_t j0 = (tile % t.col_tiles) * kColBlock;
  const std::int64_t rows = std::min(kRowBlock, s.m - i0);
  const std::int64_t cols = std::min(kColBlock, s.n - j0);
  const std::int64_t n = s.n;
  const std::int64_t k = s.k;

  alignas(64) T acc[kRowBlock][kColBlock];
  for (std::int64_t r = 0; r < rows; ++r) {
    T* dst = acc[r];
    const T* src = c + (i0 + r) * n + j0;
    if (s.accumulate) {
      for (std::int64_t j = 0; j < cols; ++j) dst[j] = src[j];
    } else {
      for (std::int64_t j = 0; j < cols; ++j) dst[j] = T(0);
    }
  }

  if (rows == kRowBlock && cols == kColBlock) {
    const T* a0 = a + (i0 + 0) * k;
    const T* a1 = a + (i0 + 1) * k;
    const T* a2 = a + (i0 + 2) * k;
    const T* a3 = a + (i0 + 3) * k;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n + j0;
      const T v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
      for (std::int64_t j = 0; j < kColBlock; ++j) {
        const T bj = brow[j];
        acc[0][j] += v0 * bj;
        acc[1][j] += v1 * bj;
        acc[2][j] += v2 * bj;
        acc[3][j] += v3 * bj;
      }
    }
  } else {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const T* __restrict brow = b + kk * n + j0;
      for (std::int64_t r = 0; r < rows; ++r) {
        const T v = a[(i0 + r) * k + kk];
        T* __restrict dst = acc[r];
        for (std::int64_t j = 0; j < cols; ++j) dst[j] += v * brow[j];
      }
    }
  }

  for (std::int64_t r = 0; r < rows; ++r) {
    T* dst = c + (i0 + r) * n + j0;
    for (std::int64_t j = 0; j < cols; ++j) dst[j] = acc[r][j];
  }
}

// One im2col row: (channel, ki, kj) -> all output positions of all samples.
template <typename T>
void im2col_row(const ConvGeometry& g, const T* x, T* cols, std::int64_t row) {
  const std::int64_t kw = g.kernel_w, kh = g.kernel_h;
  const std::int64_t c = row / (kh * kw);
  const std::int64_t ki = (row / kw) % kh;
  const std::int64_t kj = row % kw;
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  T* dst = cols + row * g.col_cols();
  for (std::int64_t bi = 0; bi < g.batch; ++bi) {
    const T* plane = x + (bi * g.channels + c) * g.height * g.width;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const std::int64_t y = oy * g.stride - g.padding + ki;
      T* out = dst + (bi * oh + oy) * ow;
      if (y < 0 || y >= g.height) {
        for (std::int64_t ox = 0; ox < ow; ++ox) out[ox] = T(0);
        continue;
      }
      const T* src = plane + y * g.width;
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const std::int64_t xx = ox * g.stride - g.padding + kj;
        out[ox] = (xx >= 0 && xx < g.width) ? src[xx] : T(0);
      }
    }
  }
}

// Accumulates every column entry that belongs to (sample, channel) into dx.
template <typename T>
void col2im_plane(const ConvGeometry& g, const T* cols, T* dx, std::int64_t plane_index) {
  const std::int64_t bi = plane_index / g.channels;
  const std::int64_t c = plane_index % g.channels;
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  T* plane = dx + plane_index * g.height * g.width;
  for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
    for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
      const std::int64_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
      const T* src = cols + row * g.col_cols() + bi * oh * ow;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const std::int64_t y = oy * g.stride - g.padding + ki;
        if (y < 0 || y >= g.height) continue;
        T* out = plane + y * g.width;
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const std::int64_t xx = ox * g.stride - g.padding + kj;
          if (xx >= 0 && xx < g.width) out[xx] += src[oy * ow + ox];
        }
      }
    }
  }
}

}  // namespace tml::kernels::detail
