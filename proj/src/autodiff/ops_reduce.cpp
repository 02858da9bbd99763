#include <cmath>
#include <limits>

#include "ops_common.hpp"

namespace tml::ops {

using detail::sz;

namespace {

Shape reduced_shape(const Shape& shape, int axis, bool keepdim) {
  Shape out = shape;
  if (keepdim) {
    out[sz(axis)] = 1;
  } else {
    out.erase(out.begin() + axis);
  }
  return out;
}

enum class ReduceKind { sum, mean };

template <typename T>
Tensor<T> linear_reduce(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim, ReduceKind kind) {
  const char* name = kind == ReduceKind::sum ? "sum" : "mean";
  const int ax = detail::normalize_axis(axis, x.rank(), name);
  const auto s = detail::split_at(x.shape(), ax);
  const T factor = kind == ReduceKind::mean ? T(1) / static_cast<T>(s.n) : T(1);
  Tensor<T> out(reduced_shape(x.shape(), ax, keepdim));
  auto y = out.data();
  const auto xv = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      T acc = T(0);
      for (std::int64_t k = 0; k < s.n; ++k) acc += xv[sz((o * s.n + k) * s.inner + i)];
      y[sz(o * s.inner + i)] = acc * factor;
    }
  }
  tape.check_finite(name, out);
  if (tape.wants_grad({&x})) {
    tape.record(name, out, [x, out, s, factor]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t k = 0; k < s.n; ++k) {
          for (std::int64_t i = 0; i < s.inner; ++i) {
            dx[sz((o * s.n + k) * s.inner + i)] += dy[sz(o * s.inner + i)] * factor;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim) {
  return linear_reduce(tape, x, axis, keepdim, ReduceKind::sum);
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim) {
  return linear_reduce(tape, x, axis, keepdim, ReduceKind::mean);
}

template <typename T>
Tensor<T> max(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim) {
  const int ax = detail::normalize_axis(axis, x.rank(), "max");
  const auto s = detail::split_at(x.shape(), ax);
  Tensor<T> out(reduced_shape(x.shape(), ax, keepdim));
  std::vector<std::int64_t> argmax(sz(s.outer * s.inner));
  auto y = out.data();
  const auto xv = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      std::int64_t best = 0;
      T bv = xv[sz(o * s.n * s.inner + i)];
      for (std::int64_t k = 1; k < s.n; ++k) {
        const T v = xv[sz((o * s.n + k) * s.inner + i)];
        if (v > bv) {
          bv = v;
          best = k;
        }
      }
      y[sz(o * s.inner + i)] = bv;
      argmax[sz(o * s.inner + i)] = best;
    }
  }
  tape.check_finite("max", out);
  if (tape.wants_grad({&x})) {
    tape.record("max", out, [x, out, s, argmax = std::move(argmax)]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          const std::int64_t k = argmax[sz(o * s.inner + i)];
          dx[sz((o * s.n + k) * s.inner + i)] += dy[sz(o * s.inner + i)];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  tape.check_finite("sum_all", out);
  if (tape.wants_grad({&x})) {
    tape.record("sum_all", out, [x, out]() mutable {
      const T g = out.grad_buffer()[0];
      for (auto& d : x.grad_buffer()) d += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis) {
  const int ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto s = detail::split_at(x.shape(), ax);
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto xv = x.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::int64_t k) { return sz((o * s.n + k) * s.inner + i); };
      T m = -std::numeric_limits<T>::infinity();
      for (std::int64_t k = 0; k < s.n; ++k) m = std::max(m, xv[at(k)]);
      T z = T(0);
      for (std::int64_t k = 0; k < s.n; ++k) {
        const T e = std::exp(xv[at(k)] - m);
        y[at(k)] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < s.n; ++k) y[at(k)] /= z;
    }
  }
  tape.check_finite("softmax", out);
  if (tape.wants_grad({&x})) {
    tape.record("softmax", out, [x, out, s]() mutable {
      const auto& dy = out.grad_buffer();
      const auto yv = out.data();
      auto& dx = x.grad_buffer();
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t i = 0; i < s.inner; ++i) {
          auto at = [&](std::int64_t k) { return sz((o * s.n + k) * s.inner + i); };
          T dot = T(0);
          for (std::int64_t k = 0; k < s.n; ++k) dot += dy[at(k)] * yv[at(k)];
          for (std::int64_t k = 0; k < s.n; ++k) dx[at(k)] += yv[at(k)] * (dy[at(k)] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [B x N], got " + shape_str(logits.shape()));
  }
  const std::int64_t rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
  }
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const auto z = logits.data();
  // Row-wise log-softmax, kept for the adjoint.
  std::vector<T> logp(z.size());
  T total = T(0);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = z.data() + r * classes;
    T m = row[0];
    for (std::int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    T acc = T(0);
    for (std::int64_t c = 0; c < classes; ++c) acc += std::exp(row[c] - m);
    const T lse = m + std::log(acc);
    for (std::int64_t c = 0; c < classes; ++c) logp[sz(r * classes + c)] = row[c] - lse;
    total -= logp[sz(r * classes + labels[sz(r)])];
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(rows));
  tape.check_finite("cross_entropy", out);
  if (tape.wants_grad({&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record("cross_entropy", out,
                [logits, out, logp = std::move(logp), lab = std::move(lab), rows, classes]() mutable {
                  const T g = out.grad_buffer()[0] / static_cast<T>(rows);
                  auto& dz = logits.grad_buffer();
                  for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t c = 0; c < classes; ++c) {
                      const T p = std::exp(logp[sz(r * classes + c)]);
                      dz[sz(r * classes + c)] += g * (p - (c == lab[sz(r)] ? T(1) : T(0)));
                    }
                  }
                });
  }
  return out;
}

#define TML_INSTANTIATE(T)                                                           \
  template Tensor<T> sum<T>(Tape<T>&, const Tensor<T>&, int, bool);                  \
  template Tensor<T> mean<T>(Tape<T>&, const Tensor<T>&, int, bool);                 \
  template Tensor<T> max<T>(Tape<T>&, const Tensor<T>&, int, bool);                  \
  template Tensor<T> sum_all<T>(Tape<T>&, const Tensor<T>&);                         \
  template Tensor<T> softmax<T>(Tape<T>&, const Tensor<T>&, int);                    \
  template Tensor<T> cross_entropy<T>(Tape<T>&, const Tensor<T>&, std::span<const int>);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::ops
