#pragma once

#include <cmath>
#include <vector>

#include "tml/rng.hpp"
#include "tml/tensor.hpp"

namespace tml::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Values in [lo, hi] bounded away from zero, for ops with a kink at 0.
template <typename T = double>
Tensor<T> random_nonzero(Shape shape, Rng& rng, double margin = 0.05) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) {
    double x = 0.0;
    do {
      x = rng.uniform(-2.0, 2.0);
    } while (std::abs(x) < margin);
    v = static_cast<T>(x);
  }
  return t;
}

template <typename T>
bool bit_equal(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::signbit(a[i]) != std::signbit(b[i]) || !(a[i] == b[i] || (std::isnan(a[i]) && std::isnan(b[i])))) {
      return false;
    }
  }
  return true;
}

}  // namespace tml::testing
