#include <omp.h>

#include <atomic>
#include <vector>

#include "kernel_tiles.hpp"
#include "tml/error.hpp"

namespace tml::kernels {

namespace {
std::atomic<Backend> g_backend{Backend::omp};
}

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }
int max_threads() { return omp_get_max_threads(); }

namespace omp {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  if (a.size() != static_cast<std::size_t>(s.m * s.k) ||
      b.size() != static_cast<std::size_t>(s.k * s.n) ||
      c.size() != static_cast<std::size_t>(s.m * s.n)) {
    throw DimensionError("gemm buffer sizes do not match m/n/k");
  }
  std::vector<T> sa, sb;
  if (s.trans_a) sa.resize(static_cast<std::size_t>(s.m * s.k));
  if (s.trans_b) sb.resize(static_cast<std::size_t>(s.k * s.n));
  const auto tiles = detail::tiling(s).count();
  const T* pa = s.trans_a ? sa.data() : a.data();
  const T* pb = s.trans_b ? sb.data() : b.data();

#pragma omp parallel
  {
    if (s.trans_a) {
#pragma omp for schedule(static)
      for (std::int64_t band = 0; band < detail::transpose_bands(s.k); ++band) {
        detail::transpose_band(a.data(), sa.data(), s.k, s.m, band);
      }
    }
    if (s.trans_b) {
#pragma omp for schedule(static)
      for (std::int64_t band = 0; band < detail::transpose_bands(s.n); ++band) {
        detail::transpose_band(b.data(), sb.data(), s.n, s.k, band);
      }
    }
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < tiles; ++t) detail::gemm_tile(s, pa, pb, c.data(), t);
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  const std::int64_t rows = g.col_rows();
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < rows; ++r) detail::im2col_row(g, x.data(), cols.data(), r);
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx) {
  const std::int64_t planes = g.batch * g.channels;
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < planes; ++p) detail::col2im_plane(g, cols.data(), dx.data(), p);
}

#define TML_INSTANTIATE(T)                                                                        \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace omp

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c) {
  if (backend() == Backend::serial) {
    serial::gemm(s, a, b, c);
  } else {
    omp::gemm(s, a, b, c);
  }
}

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols) {
  if (backend() == Backend::serial) {
    serial::im2col(g, x, cols);
  } else {
    omp::im2col(g, x, cols);
  }
}

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx) {
  if (backend() == Backend::serial) {
    serial::col2im(g, cols, dx);
  } else {
    omp::col2im(g, cols, dx);
  }
}

#define TML_INSTANTIATE(T)                                                                        \
  template void gemm<T>(const GemmShape&, std::span<const T>, std::span<const T>, std::span<T>); \
  template void im2col<T>(const ConvGeometry&, std::span<const T>, std::span<T>);                \
  template void col2im<T>(const ConvGeometry&, std::span<const T>, std::span<T>);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::kernels
