#include <algorithm>

#include "ops_common.hpp"

namespace tml::ops {

using detail::sz;

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  if (tape.wants_grad({&x})) {
    tape.record("reshape", out, [x, out]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
    });
  }
  return out;
}

namespace {

// Flat source index for every flat output index of a permutation.
std::vector<std::size_t> permutation_map(const Shape& in, const std::vector<int>& order) {
  const std::size_t r = in.size();
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[sz(order[i])];
  const std::size_t n = shape_numel(in);
  std::vector<std::size_t> map(n);
  std::vector<std::int64_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::int64_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += idx[i] * in_strides[sz(order[i])];
    map[flat] = sz(src);
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& order) {
  const int r = x.rank();
  std::vector<int> seen(sz(r), 0);
  if (static_cast<int>(order.size()) != r) throw DimensionError("permute: order length must equal rank");
  for (int o : order) {
    if (o < 0 || o >= r || seen[sz(o)]++) throw DimensionError("permute: order is not a permutation");
  }
  Shape out_shape(sz(r));
  for (int i = 0; i < r; ++i) out_shape[sz(i)] = x.shape()[sz(order[sz(i)])];
  auto map = permutation_map(x.shape(), order);
  Tensor<T> out(out_shape);
  auto y = out.data();
  const auto xv = x.data();
  for (std::size_t i = 0; i < map.size(); ++i) y[i] = xv[map[i]];
  if (tape.wants_grad({&x})) {
    tape.record("permute", out, [x, out, map = std::move(map)]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += dy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, int axis_a, int axis_b) {
  const int a = detail::normalize_axis(axis_a, x.rank(), "transpose");
  const int b = detail::normalize_axis(axis_b, x.rank(), "transpose");
  std::vector<int> order(sz(x.rank()));
  for (int i = 0; i < x.rank(); ++i) order[sz(i)] = i;
  std::swap(order[sz(a)], order[sz(b)]);
  return permute(tape, x, order);
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const int ax = detail::normalize_axis(axis, xs.front().rank(), "concat");
  Shape out_shape = xs.front().shape();
  out_shape[sz(ax)] = 0;
  for (const auto& t : xs) {
    Shape probe = t.shape();
    if (probe.size() != out_shape.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (static_cast<int>(i) != ax && probe[i] != xs.front().shape()[i]) {
        throw DimensionError("concat: shapes " + shape_str(xs.front().shape()) + " and " +
                             shape_str(t.shape()) + " differ off the concat axis");
      }
    }
    out_shape[sz(ax)] += t.dim(ax);
  }
  const auto s = detail::split_at(out_shape, ax);
  Tensor<T> out(out_shape);
  auto y = out.data();
  std::int64_t offset = 0;
  for (const auto& t : xs) {
    const std::int64_t n = t.dim(ax);
    const auto tv = t.data();
    for (std::int64_t o = 0; o < s.outer; ++o) {
      std::copy_n(tv.begin() + o * n * s.inner, n * s.inner, y.begin() + (o * s.n + offset) * s.inner);
    }
    offset += n;
  }
  bool any = false;
  for (const auto& t : xs) any = any || tape.wants_grad({&t});
  if (any) {
    tape.record("concat", out, [xs, out, s, ax]() mutable {
      const auto& dy = out.grad_buffer();
      std::int64_t offset = 0;
      for (auto& t : xs) {
        const std::int64_t n = t.dim(ax);
        if (t.requires_grad()) {
          auto& dx = t.grad_buffer();
          for (std::int64_t o = 0; o < s.outer; ++o) {
            for (std::int64_t i = 0; i < n * s.inner; ++i) {
              dx[sz(o * n * s.inner + i)] += dy[sz((o * s.n + offset) * s.inner + i)];
            }
          }
        }
        offset += n;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  const int ax = detail::normalize_axis(axis, x.rank(), "slice");
  const auto s = detail::split_at(x.shape(), ax);
  if (start < 0 || length < 1 || start + length > s.n) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") outside axis of size " + std::to_string(s.n));
  }
  Shape out_shape = x.shape();
  out_shape[sz(ax)] = length;
  Tensor<T> out(out_shape);
  auto y = out.data();
  const auto xv = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.begin() + (o * s.n + start) * s.inner, length * s.inner, y.begin() + o * length * s.inner);
  }
  if (tape.wants_grad({&x})) {
    tape.record("slice", out, [x, out, s, start, length]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < length * s.inner; ++i) {
          dx[sz((o * s.n + start) * s.inner + i)] += dy[sz(o * length * s.inner + i)];
        }
      }
    });
  }
  return out;
}

#define TML_INSTANTIATE(T)                                                                   \
  template Tensor<T> reshape<T>(Tape<T>&, const Tensor<T>&, Shape);                          \
  template Tensor<T> permute<T>(Tape<T>&, const Tensor<T>&, const std::vector<int>&);        \
  template Tensor<T> transpose<T>(Tape<T>&, const Tensor<T>&, int, int);                     \
  template Tensor<T> concat<T>(Tape<T>&, const std::vector<Tensor<T>>&, int);                \
  template Tensor<T> slice<T>(Tape<T>&, const Tensor<T>&, int, std::int64_t, std::int64_t);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::ops
