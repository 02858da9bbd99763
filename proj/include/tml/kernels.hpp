#pragma once

#include <cstdint>
#include <span>

// Dense compute kernels behind the autodiff ops.
//
// Every kernel exists twice: `serial` is the single-threaded reference, `omp`
// distributes the same tiles across OpenMP threads. Both walk the identical
// tile decomposition and each output element is produced by exactly one tile
// with a fixed reduction order, so the two are bit-identical for any thread
// count. Tests and the benchmark compare them directly.
namespace tml::kernels {

enum class Backend { serial, omp };

// Process-wide backend selection used by the ops layer (default: omp).
void set_backend(Backend backend);
Backend backend();
int max_threads();

struct GemmShape {
  std::int64_t m = 0;
  std::int64_t n = 0;
  std::int64_t k = 0;
  bool trans_a = false;  // A stored k x m
  bool trans_b = false;  // B stored n x k
  bool accumulate = false;  // C += op(A) op(B) instead of C = ...
};

struct ConvGeometry {
  std::int64_t batch = 1;
  std::int64_t channels = 1;
  std::int64_t height = 1;
  std::int64_t width = 1;
  std::int64_t kernel_h = 1;
  std::int64_t kernel_w = 1;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  std::int64_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::int64_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::int64_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::int64_t col_cols() const { return batch * out_h() * out_w(); }
};

namespace serial {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c);

// x [B x C x H x W] -> cols [C*kh*kw x B*Ho*Wo]
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols);

// Adjoint of im2col: accumulates cols back into dx.
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx);

// Direct seven-loop cross-correlation, kept as an independent reference for
// the im2col path. w [C_out x C x kh x kw], y [B x C_out x Ho x Wo].
template <typename T>
void conv2d_direct(const ConvGeometry& g, std::int64_t out_channels, std::span<const T> x,
                   std::span<const T> w, std::span<T> y);

}  // namespace serial

namespace omp {

template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c);

template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols);

template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx);

}  // namespace omp

// Dispatch through the selected backend.
template <typename T>
void gemm(const GemmShape& s, std::span<const T> a, std::span<const T> b, std::span<T> c);
template <typename T>
void im2col(const ConvGeometry& g, std::span<const T> x, std::span<T> cols);
template <typename T>
void col2im(const ConvGeometry& g, std::span<const T> cols, std::span<T> dx);

}  // namespace tml::kernels
