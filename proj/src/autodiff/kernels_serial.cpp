#include <vector>

#include "kernel_tiles.hpp"
#include "tml/error.hpp"

namespace tml::kernels::serial {

namespace {

template <typename T>
const T* packed_a(const GemmShape& s, std::span<const T> a, std::vector<T>& scratch) {
  if (!s.trans_a) return a.data();
  scratch.resize(static_cast<std::size_t>(s.m * s.k));
  for (std::int64_t band = 0; band < detail::transpose_bands(s.k); ++band) {
    detail::transpose_band(a.data(), scratch.data(), s.k, s.m, band);
  }
  return scratch.data();
}

template <typename T>
const T* packed_b(const GemmShape& s, std::span<const T> b, std::vector<T>& scratch) {
  if (!s.trans_b) return b.data();
  scratch.resize(static_cast<std::size_t>(s.k * s.n));
  for (std::int64_t band = 0; band < detail::transpose_bands(s.n); ++band) {
    detail::transpose_band(b.data(), scratch.data(), s.n, s.k, band);
  }
  return scratch.data();
}

}  // namespace

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  if (a.size() != static_cast<std::size_t>(s.m * s.k) ||
      b.size() != static_cast<std::size_t>(s.k * s.n) ||
      c.size() != static_cast<std::size_t>(s.m * s.n)) {
    throw DimensionError("gemm buffer sizes do not match m/n/k");
  }
  std::vector<T> sa, sb;
  const T* pa = packed_a(s, a, sa);
  const T* pb = packed_b(s, b, sb);
  const auto tiles = detail::tiling(s).count();
  for (std::int64_t t = 0; t < tiles; ++t) detail::gemm_tile(s, pa, pb, c.data(), t);
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  for (std::int64_t r = 0; r < g.col_rows(); ++r) detail::im2col_row(g, x.data(), cols.data(), r);
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx) {
  for (std::int64_t p = 0; p < g.batch * g.channels; ++p) {
    detail::col2im_plane(g, cols.data(), dx.data(), p);
  }
}

template <typename T>
void conv2d_direct(const ConvGeometry& g, std::int64_t out_channels, std::span<const T> x,
                   std::span<const T> w, std::span<T> y) {
  const std::int64_t oh = g.out_h(), ow = g.out_w();
  for (std::int64_t bi = 0; bi < g.batch; ++bi) {
    for (std::int64_t co = 0; co < out_channels; ++co) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T sum = T(0);
          for (std::int64_t ci = 0; ci < g.channels; ++ci) {
            for (std::int64_t ki = 0; ki < g.kernel_h; ++ki) {
              for (std::int64_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::int64_t yy = oy * g.stride - g.padding + ki;
                const std::int64_t xx = ox * g.stride - g.padding + kj;
                if (yy < 0 || yy >= g.height || xx < 0 || xx >= g.width) continue;
                sum += x[static_cast<std::size_t>(((bi * g.channels + ci) * g.height + yy) * g.width + xx)] *
                       w[static_cast<std::size_t>(((co * g.channels + ci) * g.kernel_h + ki) * g.kernel_w + kj)];
              }
            }
          }
          y[static_cast<std::size_t>(((bi * out_channels + co) * oh + oy) * ow + ox)] = sum;
        }
      }
    }
  }
}

#define TML_INSTANTIATE(T)                                                                        \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                \
  template void conv2d_direct<T>(const ConvGeometry&, std::int64_t, std::span<const T>,          \
                                 std::span<const T>, std::span<T>);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::kernels::serial
