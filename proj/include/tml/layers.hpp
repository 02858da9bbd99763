#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tml/ops.hpp"
#include "tml/rng.hpp"

namespace tml {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), trainable.
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng);

template <typename T>
struct Conv2d {
  Tensor<T> kernel;  // [C_out x C_in x k x k]
  ops::Conv2dParams params;

  Conv2d() = default;
  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k, ops::Conv2dParams p, Rng& rng);
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return ops::conv2d(tape, x, kernel, params); }
  void collect(NamedTensors<T>& params_out, const std::string& prefix) const;
};

template <typename T>
struct BatchNorm {
  Tensor<T> gain;
  Tensor<T> bias;
  ops::BatchNormState<T> state;

  BatchNorm() = default;
  explicit BatchNorm(std::int64_t channels, T momentum = T(0.1), T epsilon = T(1e-5));
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, bool training) {
    return ops::batchnorm(tape, x, gain, bias, state, training);
  }
  void collect(NamedTensors<T>& params_out, const std::string& prefix) const;
  void collect_buffers(NamedTensors<T>& buffers_out, const std::string& prefix) const;
};

template <typename T>
struct PRelu {
  Tensor<T> slope;  // one per channel, initialized to 0.25

  PRelu() = default;
  explicit PRelu(std::int64_t channels);
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return ops::prelu(tape, x, slope, 1); }
  void collect(NamedTensors<T>& params_out, const std::string& prefix) const;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out], may be undefined

  Linear() = default;
  Linear(std::int64_t in, std::int64_t out, bool with_bias, Rng& rng);
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return ops::linear(tape, x, weight, bias); }
  void collect(NamedTensors<T>& params_out, const std::string& prefix) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(std::int64_t dim);
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return ops::layernorm(tape, x, gain, bias); }
  void collect(NamedTensors<T>& params_out, const std::string& prefix) const;
};

}  // namespace tml
