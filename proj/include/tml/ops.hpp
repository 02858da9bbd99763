#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tml/tape.hpp"
#include "tml/tensor.hpp"

// Differentiable tensor operations. Each op computes its result eagerly and,
// when the tape is recording and any input requires grad, registers the
// adjoint that accumulates (+=) into the inputs' gradient buffers.
namespace tml::ops {

// ---- linear algebra -------------------------------------------------------

// a [m x k] * b [k x n] -> [m x n]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Batched: a [B x m x k] * b [B x k x n] -> [B x m x n]
template <typename T>
Tensor<T> bmm(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// x [N x in] * w[out x in]^T + bias[out]. bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

struct Conv2dParams {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

// Cross-correlation (no kernel flip). x [B x C x H x W] or [C x H x W],
// kernel [C_out x C x kh x kw].
template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& kernel, Conv2dParams p);

// ---- elementwise ----------------------------------------------------------
// Binary ops accept equal shapes or a single-element right operand.

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// v has one entry per index of x along `axis`.
template <typename T>
Tensor<T> add_channel(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis);
template <typename T>
Tensor<T> mul_channel(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& v, int axis);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);
// Per-channel slope along `axis` (1 for NCHW / NC layouts).
template <typename T>
Tensor<T> prelu(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& slope, int axis = 1);
template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sqrt(Tape<T>& tape, const Tensor<T>& x);
// Gradient passes only where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& x, T lo, T hi);

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim = false);
// Gradient routes to the first maximal element along the axis.
template <typename T>
Tensor<T> max(Tape<T>& tape, const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T>
Tensor<T> sum_all(Tape<T>& tape, const Tensor<T>& x);

// ---- normalization / probabilities ---------------------------------------

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, int axis = -1);

// Mean over rows of -log softmax(logits)[label]. logits [B x N].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels);

// Normalizes over the last dimension, then applies gain and bias ([d] each).
template <typename T>
Tensor<T> layernorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    T epsilon = T(1e-5));

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
};

// x [B x C x H x W] or [B x C]; statistics per channel. Training mode uses
// batch statistics (biased variance) and updates the running estimates with
// the unbiased variance; eval mode uses the running estimates.
template <typename T>
Tensor<T> batchnorm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                    BatchNormState<T>& state, bool training);

// Each vector along the last dimension divided by max(||v||, epsilon).
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, T epsilon = T(1e-12));

// ---- index remapping ------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(Tape<T>& tape, const Tensor<T>& x, const std::vector<int>& order);
template <typename T>
Tensor<T> transpose(Tape<T>& tape, const Tensor<T>& x, int axis_a, int axis_b);
template <typename T>
Tensor<T> concat(Tape<T>& tape, const std::vector<Tensor<T>>& xs, int axis);
template <typename T>
Tensor<T> slice(Tape<T>& tape, const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);

}  // namespace tml::ops
