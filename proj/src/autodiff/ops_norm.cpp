#include <cmath>

#include "ops_common.hpp"

namespace tml::ops {

using detail::sz;

template <typename T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T epsilon) {
  if (x.rank() < 1) throw DimensionError("layernorm: scalar input");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / d;
  if (gain.numel() != sz(d) || bias.numel() != sz(d)) {
    throw DimensionError("layernorm: gain/bias must have " + std::to_string(d) + " entries");
  }
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(sz(rows));
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto y = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = xv.data() + r * d;
    T mu = T(0);
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + epsilon);
    inv_std[sz(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      xhat[sz(r * d + j)] = h;
      y[sz(r * d + j)] = h * gv[sz(j)] + bv[sz(j)];
    }
  }
  tape.check_finite("layernorm", out);
  if (tape.wants_grad({&x, &gain, &bias})) {
    tape.record("layernorm", out,
                [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d]() mutable {
                  const auto& dy = out.grad_buffer();
                  const auto gv = gain.data();
                  if (gain.requires_grad() || bias.requires_grad()) {
                    std::vector<T>* dg = gain.requires_grad() ? &gain.grad_buffer() : nullptr;
                    std::vector<T>* db = bias.requires_grad() ? &bias.grad_buffer() : nullptr;
                    for (std::int64_t r = 0; r < rows; ++r) {
                      for (std::int64_t j = 0; j < d; ++j) {
                        const std::size_t k = sz(r * d + j);
                        if (dg) (*dg)[sz(j)] += dy[k] * xhat[k];
                        if (db) (*db)[sz(j)] += dy[k];
                      }
                    }
                  }
                  if (x.requires_grad()) {
                    auto& dx = x.grad_buffer();
                    std::vector<T> dh(sz(d));
                    for (std::int64_t r = 0; r < rows; ++r) {
                      T mean_dh = T(0), mean_dh_h = T(0);
                      for (std::int64_t j = 0; j < d; ++j) {
                        const std::size_t k = sz(r * d + j);
                        dh[sz(j)] = dy[k] * gv[sz(j)];
                        mean_dh += dh[sz(j)];
                        mean_dh_h += dh[sz(j)] * xhat[k];
                      }
                      mean_dh /= static_cast<T>(d);
                      mean_dh_h /= static_cast<T>(d);
                      for (std::int64_t j = 0; j < d; ++j) {
                        const std::size_t k = sz(r * d + j);
                        dx[k] += inv_std[sz(r)] * (dh[sz(j)] - mean_dh - xhat[k] * mean_dh_h);
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    BatchNormState<T>& state, bool training) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw DimensionError("batchnorm: expected [B x C] or [B x C x H x W], got " + shape_str(x.shape()));
  }
  const std::int64_t batch = x.dim(0), channels = x.dim(1);
  const std::int64_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gain.numel() != sz(channels) || bias.numel() != sz(channels) ||
      state.running_mean.numel() != sz(channels) || state.running_var.numel() != sz(channels)) {
    throw DimensionError("batchnorm: parameters do not match " + std::to_string(channels) + " channels");
  }
  if (training && batch < 2) throw DimensionError("batchnorm: training mode needs batch size >= 2");
  const std::int64_t count = batch * spatial;
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<T> mean_c(sz(channels)), inv_std(sz(channels));
  if (training) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::int64_t c = 0; c < channels; ++c) {
      T mu = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * channels + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) mu += p[i];
      }
      mu /= static_cast<T>(count);
      T var = T(0);
      for (std::int64_t b = 0; b < batch; ++b) {
        const T* p = xv.data() + (b * channels + c) * spatial;
        for (std::int64_t i = 0; i < spatial; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      const T unbiased = var / static_cast<T>(count - 1);
      var /= static_cast<T>(count);
      mean_c[sz(c)] = mu;
      inv_std[sz(c)] = T(1) / std::sqrt(var + state.epsilon);
      rm[sz(c)] = (T(1) - state.momentum) * rm[sz(c)] + state.momentum * mu;
      rv[sz(c)] = (T(1) - state.momentum) * rv[sz(c)] + state.momentum * unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean_c[sz(c)] = state.running_mean.data()[sz(c)];
      inv_std[sz(c)] = T(1) / std::sqrt(state.running_var.data()[sz(c)] + state.epsilon);
    }
  }
  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel());
  auto y = out.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const std::size_t base = sz((b * channels + c) * spatial);
      for (std::int64_t i = 0; i < spatial; ++i) {
        const T h = (xv[base + sz(i)] - mean_c[sz(c)]) * inv_std[sz(c)];
        xhat[base + sz(i)] = h;
        y[base + sz(i)] = h * gv[sz(c)] + bv[sz(c)];
      }
    }
  }
  tape.check_finite("batchnorm", out);
  if (tape.wants_grad({&x, &gain, &bias})) {
    tape.record("batchnorm", out,
                [x, gain, bias, out, xhat = std::move(xhat), inv_std = std::move(inv_std), training, batch,
                 channels, spatial, count]() mutable {
                  const auto& dy = out.grad_buffer();
                  const auto gv = gain.data();
                  std::vector<T>* dg = gain.requires_grad() ? &gain.grad_buffer() : nullptr;
                  std::vector<T>* db = bias.requires_grad() ? &bias.grad_buffer() : nullptr;
                  std::vector<T>* dx = x.requires_grad() ? &x.grad_buffer() : nullptr;
                  for (std::int64_t c = 0; c < channels; ++c) {
                    T sum_dy = T(0), sum_dy_h = T(0);
                    for (std::int64_t b = 0; b < batch; ++b) {
                      const std::size_t base = sz((b * channels + c) * spatial);
                      for (std::int64_t i = 0; i < spatial; ++i) {
                        sum_dy += dy[base + sz(i)];
                        sum_dy_h += dy[base + sz(i)] * xhat[base + sz(i)];
                      }
                    }
                    if (dg) (*dg)[sz(c)] += sum_dy_h;
                    if (db) (*db)[sz(c)] += sum_dy;
                    if (!dx) continue;
                    const T scale = gv[sz(c)] * inv_std[sz(c)];
                    const T mean_dy = sum_dy / static_cast<T>(count);
                    const T mean_dy_h = sum_dy_h / static_cast<T>(count);
                    for (std::int64_t b = 0; b < batch; ++b) {
                      const std::size_t base = sz((b * channels + c) * spatial);
                      for (std::int64_t i = 0; i < spatial; ++i) {
                        const std::size_t k = base + sz(i);
                        (*dx)[k] += training ? scale * (dy[k] - mean_dy - xhat[k] * mean_dy_h) : scale * dy[k];
                      }
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, T epsilon) {
  if (x.rank() < 1) throw DimensionError("l2_normalize: scalar input");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / d;
  Tensor<T> out(x.shape());
  std::vector<T> norms(sz(rows));
  const auto xv = x.data();
  auto y = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    T ss = T(0);
    for (std::int64_t j = 0; j < d; ++j) ss += xv[sz(r * d + j)] * xv[sz(r * d + j)];
    const T n = std::sqrt(ss);
    norms[sz(r)] = n;
    const T denom = n > epsilon ? n : epsilon;
    for (std::int64_t j = 0; j < d; ++j) y[sz(r * d + j)] = xv[sz(r * d + j)] / denom;
  }
  tape.check_finite("l2_normalize", out);
  if (tape.wants_grad({&x})) {
    tape.record("l2_normalize", out, [x, out, norms = std::move(norms), rows, d, epsilon]() mutable {
      const auto& dy = out.grad_buffer();
      const auto yv = out.data();
      auto& dx = x.grad_buffer();
      for (std::int64_t r = 0; r < rows; ++r) {
        const T n = norms[sz(r)];
        if (n > epsilon) {
          T dot = T(0);
          for (std::int64_t j = 0; j < d; ++j) dot += dy[sz(r * d + j)] * yv[sz(r * d + j)];
          for (std::int64_t j = 0; j < d; ++j) {
            dx[sz(r * d + j)] += (dy[sz(r * d + j)] - yv[sz(r * d + j)] * dot) / n;
          }
        } else {
          for (std::int64_t j = 0; j < d; ++j) dx[sz(r * d + j)] += dy[sz(r * d + j)] / epsilon;
        }
      }
    });
  }
  return out;
}

#define TML_INSTANTIATE(T)                                                                             \
  template Tensor<T> layernorm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> batchnorm<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                  BatchNormState<T>&, bool);                                           \
  template Tensor<T> l2_normalize<T>(Tape<T>&, const Tensor<T>&, T);
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml::ops
