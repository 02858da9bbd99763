#include <cmath>

#include "ops_common.hpp"

namespace tml::ops {

using detail::sz;

namespace {

enum class BinaryKind { add, sub, mul };

const char* binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    default: return "mul";
  }
}

template <typename T>
Tensor<T> binary(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const char* name = binary_name(kind);
  const bool scalar_b = b.numel() == 1 && a.shape() != b.shape();
  if (!scalar_b && a.shape() != b.shape()) {
    throw DimensionError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " are not broadcast-compatible");
  }
  Tensor<T> out(a.shape());
  auto y = out.data();
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t n = av.size();
  for (std::size_t i = 0; i < n; ++i) {
    const T bi = scalar_b ? bv[0] : bv[i];
    switch (kind) {
      case BinaryKind::add: y[i] = av[i] + bi; break;
      case BinaryKind::sub: y[i] = av[i] - bi; break;
      case BinaryKind::mul: y[i] = av[i] * bi; break;
    }
  }
  tape.check_finite(name, out);
  if (tape.wants_grad({&a, &b})) {
    tape.record(name, out, [a, b, out, kind, scalar_b, n]() mutable {
      const auto& dy = out.grad_buffer();
      if (a.requires_grad()) {
        auto& da = a.grad_buffer();
        const auto bv = b.data();
        for (std::size_t i = 0; i < n; ++i) {
          da[i] += kind == BinaryKind::mul ? dy[i] * (scalar_b ? bv[0] : bv[i]) : dy[i];
        }
      }
      if (b.requires_grad()) {
        auto& db = b.grad_buffer();
        const auto av = a.data();
        for (std::size_t i = 0; i < n; ++i) {
          T g = dy[i];
          if (kind == BinaryKind::sub) g = -g;
          if (kind == BinaryKind::mul) g *= av[i];
          db[scalar_b ? 0 : i] += g;
        }
      }
    });
  }
  return out;
}

template <typename T>
detail::AxisSplit channel_split(const Tensor<T>& x, const Tensor<T>& v, int axis, const char* op) {
  const int ax = detail::normalize_axis(axis, x.rank(), op);
  const auto s = detail::split_at(x.shape(), ax);
  if (v.rank() != 1 || v.dim(0) != s.n) {
    throw DimensionError(std::string(op) + ": per-channel operand " + shape_str(v.shape()) +
                         " does not match axis " + std::to_string(ax) + " of " + shape_str(x.shape()));
  }
  return s;
}

// Pointwise unary op with derivative expressed through input and output.
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(Tape<T>& tape, const Tensor<T>& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = fwd(xv[i]);
  tape.check_finite(name, out);
  if (tape.wants_grad({&x})) {
    tape.record(name, out, [x, out, deriv]() mutable {
      const auto& dy = out.grad_buffer();
      auto& dx = x.grad_buffer();
      const auto xv = x.data();
      const auto yv = out.data();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * deriv(xv[i], yv[i]);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, a, b, BinaryKind::add);
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, a, b, BinaryKind::sub);
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  return binary(tape, a, b, BinaryKind::mul);
}

template <typename T>
Tensor<T> add_channel(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis) {
  const auto s = channel_split(x, v, axis, "add_channel");
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto xv = x.data();
  const auto vv = v.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.n; ++c) {
      const std::size_t base = sz((o * s.n + c) * s.inner);
      for (std::int64_t i = 0; i < s.inner; ++i) y[base + sz(i)] = xv[base + sz(i)] + vv[sz(c)];
    }
  }
  tape.check_finite("add_channel", out);
  if (tape.wants_grad({&x, &v})) {
    tape.record("add_channel", out, [x, v, out, s]() mutable {
      const auto& dy = out.grad_buffer();
      if (x.requires_grad()) {
        auto& dx = x.grad_buffer();
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
      }
      if (v.requires_grad()) {
        auto& dv = v.grad_buffer();
        for (std::int64_t o = 0; o < s.outer; ++o) {
          for (std::int64_t c = 0; c < s.n; ++c) {
            const std::size_t base = sz((o * s.n + c) * s.inner);
            T acc = T(0);
            for (std::int64_t i = 0; i < s.inner; ++i) acc += dy[base + sz(i)];
            dv[sz(c)] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_channel(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis) {
  const auto s = channel_split(x, v, axis, "mul_channel");
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto xv = x.data();
  const auto vv = v.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.n; ++c) {
      const std::size_t base = sz((o * s.n + c) * s.inner);
      for (std::int64_t i = 0; i < s.inner; ++i) y[base + sz(i)] = xv[base + sz(i)] * vv[sz(c)];
    }
  }
  tape.check_finite("mul_channel", out);
  if (tape.wants_grad({&x, &v})) {
    tape.record("mul_channel", out, [x, v, out, s]() mutable {
      const auto& dy = out.grad_buffer();
      const auto xv = x.data();
      const auto vv = v.data();
      std::vector<T>* dx = x.requires_grad() ? &x.grad_buffer() : nullptr;
      std::vector<T>* dv = v.requires_grad() ? &v.grad_buffer() : nullptr;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t c = 0; c < s.n; ++c) {
          const std::size_t base = sz((o * s.n + c) * s.inner);
          T acc = T(0);
          for (std::int64_t i = 0; i < s.inner; ++i) {
            const std::size_t k = base + sz(i);
            if (dx) (*dx)[k] += dy[k] * vv[sz(c)];
            acc += dy[k] * xv[k];
          }
          if (dv) (*dv)[sz(c)] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  return unary(
      tape, x, "scale", [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> prelu(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& slope, int axis) {
  const auto s = channel_split(x, slope, axis, "prelu");
  Tensor<T> out(x.shape());
  auto y = out.data();
  const auto xv = x.data();
  const auto av = slope.data();
  for (std::int64_t o = 0; o < s.outer; ++o) {
    for (std::int64_t c = 0; c < s.n; ++c) {
      const std::size_t base = sz((o * s.n + c) * s.inner);
      for (std::int64_t i = 0; i < s.inner; ++i) {
        const T v = xv[base + sz(i)];
        y[base + sz(i)] = v > T(0) ? v : av[sz(c)] * v;
      }
    }
  }
  tape.check_finite("prelu", out);
  if (tape.wants_grad({&x, &slope})) {
    tape.record("prelu", out, [x, slope, out, s]() mutable {
      const auto& dy = out.grad_buffer();
      const auto xv = x.data();
      const auto av = slope.data();
      std::vector<T>* dx = x.requires_grad() ? &x.grad_buffer() : nullptr;
      std::vector<T>* da = slope.requires_grad() ? &slope.grad_buffer() : nullptr;
      for (std::int64_t o = 0; o < s.outer; ++o) {
        for (std::int64_t c = 0; c < s.n; ++c) {
          const std::size_t base = sz((o * s.n + c) * s.inner);
          T acc = T(0);
          for (std::int64_t i = 0; i < s.inner; ++i) {
            const std::size_t k = base + sz(i);
            const bool pos = xv[k] > T(0);
            if (dx) (*dx)[k] += pos ? dy[k] : dy[k] * av[sz(c)];
            if (!pos) acc += dy[k] * xv[k];
          }
          if (da) (*da)[sz(c)] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x) {
  if (tape.checked()) {
    for (T v : x.data()) {
      if (v < T(0)) throw DomainError("log of negative value " + std::to_string(v));
    }
  }
  return unary(
      tape, x, "log", [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sqrt(Tape<T>& tape, const Tensor<T>& x) {
  if (tape.checked()) {
    for (T v : x.data()) {
      if (v < T(0)) throw DomainError("sqrt of negative value " + std::to_string(v));
    }
  }
  return unary(
      tape, x, "sqrt", [](T v) { return std::sqrt(v); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& x, T lo, T hi) {
  if (lo > hi) throw DomainError("clamp: lower bound exceeds upper bound");
  return unary(
      tape, x, "clamp", [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1); });
}

#define TML_INSTANTIATE(T)                                                                  \
  template Tensor<T> add<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> sub<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> add_channel<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int);     \
  template Tensor<T> mul_channel<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int);     \
  template Tensor<T> scale<T>(Tape<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> relu<T>(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> prelu<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, int);           \
  template Tensor<T> exp<T>(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> log<T>(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sqrt<T>(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> clamp<T>(Tape<T>&, const Tensor<T>&, T, T);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::ops
