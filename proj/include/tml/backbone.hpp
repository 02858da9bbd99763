#pragma once

#include <cstdint>
#include <vector>

#include "tml/layers.hpp"

namespace tml {

struct FeatureMapShape {
  std::int64_t channels = 0;  // D_f
  std::int64_t height = 0;    // H_f
  std::int64_t width = 0;     // W_f
  std::int64_t sequence_length() const { return height * width; }
};

struct BackboneConfig {
  std::int64_t input_channels = 3;
  std::int64_t input_height = 32;
  std::int64_t input_width = 32;
  std::vector<std::int64_t> stage_channels{32, 64, 128};
  std::vector<std::int64_t> blocks_per_stage{1, 1, 1};
  std::int64_t embedding_dim = 64;
  // Batch-normalize the embedding after the flatten+linear map.
  bool embedding_batchnorm = false;

  // Stem keeps the input resolution; each stage halves it (stride-2 entry block).
  FeatureMapShape final_map() const;
  std::int64_t flatten_dim() const;
  // Throws ConfigError on an invalid configuration, including a final map
  // with height or width 1.
  void validate() const;
};

template <typename T>
struct FeatureMap {
  Tensor<T> values;  // [B x D_f x H_f x W_f]
};

template <typename T>
struct Embedding {
  Tensor<T> values;  // [B x embedding_dim], unnormalized
};

// conv3x3-BN-PReLU-conv3x3-BN with an identity or 1x1 projection shortcut,
// preceded by a BN on the block input.
template <typename T>
struct ResidualBlock {
  BatchNorm<T> bn_in;
  Conv2d<T> conv1;
  BatchNorm<T> bn1;
  PRelu<T> act;
  Conv2d<T> conv2;
  BatchNorm<T> bn2;
  bool projection = false;
  Conv2d<T> shortcut_conv;
  BatchNorm<T> shortcut_bn;

  ResidualBlock() = default;
  ResidualBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride, Rng& rng);
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x, bool training);
  void collect(NamedTensors<T>& params, const std::string& prefix) const;
  void collect_buffers(NamedTensors<T>& buffers, const std::string& prefix) const;
};

template <typename T>
class Backbone {
 public:
  struct Output {
    FeatureMap<T> feature_map;  // final convolution output, the branch split point
    Embedding<T> embedding;     // flatten + linear map of the feature map
  };

  Backbone() = default;
  // Deterministic in `seed`: fan-in uniform weights, BN gain 1 / bias 0,
  // PReLU slope 0.25.
  Backbone(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  Output forward(Tape<T>& tape, const Tensor<T>& images, bool training);

  // All trainable tensors, in a fixed order.
  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;

  // Parameters of the flatten+linear embedding map (L_1 and its optional BN).
  NamedTensors<T> embedding_parameters() const;
  // Kernel of the last convolution before the split point.
  const Tensor<T>& final_conv_kernel() const;

  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }

 private:
  BackboneConfig config_;
  Conv2d<T> stem_conv_;
  BatchNorm<T> stem_bn_;
  PRelu<T> stem_act_;
  std::vector<ResidualBlock<T>> blocks_;
  Linear<T> embed_;
  BatchNorm<T> embed_bn_;
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace tml
