#pragma once

#include <string>

#include "tml/error.hpp"
#include "tml/ops.hpp"

namespace tml::ops::detail {

inline int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return a;
}

// Splits a shape around `axis` into outer * n * inner.
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t n = 1;
  std::int64_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline std::size_t sz(std::int64_t v) { return static_cast<std::size_t>(v); }

template <typename T>
void require_defined(const Tensor<T>& t, const char* op, const char* what) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined " + what);
}

}  // namespace tml::ops::detail
