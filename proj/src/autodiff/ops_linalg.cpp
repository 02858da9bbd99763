#include <numeric>

#include "ops_common.hpp"
#include "tml/kernels.hpp"

namespace tml::ops {

using detail::sz;

namespace {

template <typename T>
std::span<const T> cspan(const std::vector<T>& v) {
  return std::span<const T>(v.data(), v.size());
}

template <typename T>
std::span<const T> sub_span(std::span<const T> s, std::int64_t offset, std::int64_t count) {
  return s.subspan(sz(offset), sz(count));
}

template <typename T>
std::span<T> sub_span(std::span<T> s, std::int64_t offset, std::int64_t count) {
  return s.subspan(sz(offset), sz(count));
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  kernels::gemm<T>({.m = m, .n = n, .k = k}, a.data(), b.data(), out.data());
  tape.check_finite("matmul", out);
  if (tape.wants_grad({&a, &b})) {
    tape.record("matmul", out, [a, b, out, m, n, k]() mutable {
      const auto dc = cspan(out.grad_buffer());
      if (a.requires_grad()) {
        kernels::gemm<T>({.m = m, .n = k, .k = n, .trans_b = true, .accumulate = true}, dc, b.data(),
                         std::span<T>(a.grad_buffer()));
      }
      if (b.requires_grad()) {
        kernels::gemm<T>({.m = k, .n = n, .k = m, .trans_a = true, .accumulate = true}, a.data(), dc,
                         std::span<T>(b.grad_buffer()));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor<T> out(Shape{batch, m, n});
  for (std::int64_t i = 0; i < batch; ++i) {
    kernels::serial::gemm<T>({.m = m, .n = n, .k = k}, sub_span(a.data(), i * m * k, m * k),
                             sub_span(b.data(), i * k * n, k * n), sub_span(out.data(), i * m * n, m * n));
  }
  tape.check_finite("bmm", out);
  if (tape.wants_grad({&a, &b})) {
    tape.record("bmm", out, [a, b, out, batch, m, n, k]() mutable {
      const auto dc = cspan(out.grad_buffer());
      std::span<T> da = a.requires_grad() ? std::span<T>(a.grad_buffer()) : std::span<T>();
      std::span<T> db = b.requires_grad() ? std::span<T>(b.grad_buffer()) : std::span<T>();
      for (std::int64_t i = 0; i < batch; ++i) {
        const auto dci = sub_span(dc, i * m * n, m * n);
        if (!da.empty()) {
          kernels::serial::gemm<T>({.m = m, .n = k, .k = n, .trans_b = true, .accumulate = true}, dci,
                                   sub_span(b.data(), i * k * n, k * n), sub_span(da, i * m * k, m * k));
        }
        if (!db.empty()) {
          kernels::serial::gemm<T>({.m = k, .n = n, .k = m, .trans_a = true, .accumulate = true},
                                   sub_span(a.data(), i * m * k, m * k), dci, sub_span(db, i * k * n, k * n));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(weight.shape()));
  }
  const std::int64_t rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                         shape_str(weight.shape()));
  }
  Tensor<T> out(Shape{rows, out_dim});
  kernels::gemm<T>({.m = rows, .n = out_dim, .k = in, .trans_b = true}, x.data(), weight.data(), out.data());
  if (bias.defined()) {
    auto y = out.data();
    const auto bv = bias.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < out_dim; ++j) y[sz(r * out_dim + j)] += bv[sz(j)];
    }
  }
  tape.check_finite("linear", out);
  if (tape.wants_grad({&x, &weight, &bias})) {
    tape.record("linear", out, [x, weight, bias, out, rows, in, out_dim]() mutable {
      const auto dy = cspan(out.grad_buffer());
      if (x.requires_grad()) {
        kernels::gemm<T>({.m = rows, .n = in, .k = out_dim, .accumulate = true}, dy, weight.data(),
                         std::span<T>(x.grad_buffer()));
      }
      if (weight.requires_grad()) {
        kernels::gemm<T>({.m = out_dim, .n = in, .k = rows, .trans_a = true, .accumulate = true}, dy,
                         x.data(), std::span<T>(weight.grad_buffer()));
      }
      if (bias.defined() && bias.requires_grad()) {
        auto& db = bias.grad_buffer();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < out_dim; ++j) db[sz(j)] += dy[sz(r * out_dim + j)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, Conv2dParams p) {
  const bool batched = x.rank() == 4;
  if ((x.rank() != 3 && x.rank() != 4) || kernel.rank() != 4) {
    throw DimensionError("conv2d: expected input [B x C x H x W] or [C x H x W] and 4-d kernel, got " +
                         shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (p.stride < 1 || p.padding < 0) throw DimensionError("conv2d: stride must be >= 1, padding >= 0");
  kernels::ConvGeometry g;
  g.batch = batched ? x.dim(0) : 1;
  g.channels = x.dim(-3);
  g.height = x.dim(-2);
  g.width = x.dim(-1);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = p.stride;
  g.padding = p.padding;
  const std::int64_t out_ch = kernel.dim(0);
  if (kernel.dim(1) != g.channels) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(1)) + " input channels, input " + shape_str(x.shape()) +
                         " has " + std::to_string(g.channels));
  }
  if (g.kernel_h > g.height + 2 * g.padding || g.kernel_w > g.width + 2 * g.padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  const std::int64_t oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
  const std::int64_t rows = g.col_rows(), cols_n = g.col_cols();

  auto cols = std::make_shared<std::vector<T>>(sz(rows * cols_n));
  kernels::im2col<T>(g, x.data(), *cols);
  std::vector<T> yt(sz(out_ch * cols_n));
  kernels::gemm<T>({.m = out_ch, .n = cols_n, .k = rows}, kernel.data(), cspan(*cols), yt);

  Shape out_shape = batched ? Shape{g.batch, out_ch, oh, ow} : Shape{out_ch, oh, ow};
  Tensor<T> out(out_shape);
  auto y = out.data();
  for (std::int64_t b = 0; b < g.batch; ++b) {
    for (std::int64_t c = 0; c < out_ch; ++c) {
      const T* src = yt.data() + c * cols_n + b * plane;
      T* dst = y.data() + (b * out_ch + c) * plane;
      std::copy(src, src + plane, dst);
    }
  }
  tape.check_finite("conv2d", out);
  if (tape.wants_grad({&x, &kernel})) {
    tape.record("conv2d", out, [x, kernel, out, cols, g, out_ch, rows, cols_n, plane]() mutable {
      const auto dy = cspan(out.grad_buffer());
      std::vector<T> dyt(sz(out_ch * cols_n));
      for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t c = 0; c < out_ch; ++c) {
          const T* src = dy.data() + (b * out_ch + c) * plane;
          std::copy(src, src + plane, dyt.data() + c * cols_n + b * plane);
        }
      }
      if (kernel.requires_grad()) {
        kernels::gemm<T>({.m = out_ch, .n = rows, .k = cols_n, .trans_b = true, .accumulate = true},
                         cspan(dyt), cspan(*cols), std::span<T>(kernel.grad_buffer()));
      }
      if (x.requires_grad()) {
        std::vector<T> dcols(sz(rows * cols_n));
        kernels::gemm<T>({.m = rows, .n = cols_n, .k = out_ch, .trans_a = true}, kernel.data(), cspan(dyt),
                         dcols);
        kernels::col2im<T>(g, cspan(dcols), std::span<T>(x.grad_buffer()));
      }
    });
  }
  return out;
}

#define TML_INSTANTIATE(T)                                                                        \
  template Tensor<T> matmul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> bmm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> linear<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> conv2d<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dParams);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::ops
