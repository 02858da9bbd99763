#include "tml/layers.hpp"

#include <cmath>

namespace tml {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape), T(0), true);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k, ops::Conv2dParams p, Rng& rng)
    : kernel(fan_in_uniform<T>(Shape{out_ch, in_ch, k, k}, in_ch * k * k, rng)), params(p) {}

template <typename T>
void Conv2d<T>::collect(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".kernel", kernel);
}

template <typename T>
BatchNorm<T>::BatchNorm(std::int64_t channels, T momentum, T epsilon)
    : gain(Shape{channels}, T(1), true),
      bias(Shape{channels}, T(0), true),
      state{Tensor<T>(Shape{channels}, T(0)), Tensor<T>(Shape{channels}, T(1)), momentum, epsilon} {}

template <typename T>
void BatchNorm<T>::collect(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
void BatchNorm<T>::collect_buffers(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".running_mean", state.running_mean);
  out.emplace_back(prefix + ".running_var", state.running_var);
}

template <typename T>
PRelu<T>::PRelu(std::int64_t channels) : slope(Shape{channels}, T(0.25), true) {}

template <typename T>
void PRelu<T>::collect(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".slope", slope);
}

template <typename T>
Linear<T>::Linear(std::int64_t in, std::int64_t out, bool with_bias, Rng& rng)
    : weight(fan_in_uniform<T>(Shape{out, in}, in, rng)) {
  if (with_bias) bias = fan_in_uniform<T>(Shape{out}, in, rng);
}

template <typename T>
void Linear<T>::collect(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::int64_t dim) : gain(Shape{dim}, T(1), true), bias(Shape{dim}, T(0), true) {}

template <typename T>
void LayerNorm<T>::collect(NamedTensors<T>& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

template Tensor<float> fan_in_uniform<float>(Shape, std::int64_t, Rng&);
template Tensor<double> fan_in_uniform<double>(Shape, std::int64_t, Rng&);
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct PRelu<float>;
template struct PRelu<double>;
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;

}  // namespace tml
