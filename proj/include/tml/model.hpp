#pragma once

#include <cstdint>
#include <span>

#include "tml/backbone.hpp"
#include "tml/metric_heads.hpp"
#include "tml/transformer_head.hpp"

namespace tml {

struct ModelConfig {
  BackboneConfig backbone;
  // model_dim and sequence_length are taken from the backbone's final map.
  EncoderConfig encoder;
  MarginConfig margin;
  HeadVariant head_variant = HeadVariant::linear;
  std::int64_t num_classes = 10;

  EncoderConfig resolved_encoder() const;
  void validate() const;
};

// Backbone with branch 1 (flatten + linear -> margin head, O_Nc) and branch 2
// (transformer head on the final feature map, T_Nc).
template <typename T>
class Model {
 public:
  struct Output {
    FeatureMap<T> feature_map;
    Embedding<T> embedding;
    Tensor<T> metric_logits;       // O_Nc
    Tensor<T> transformer_logits;  // T_Nc, undefined when branch 2 is skipped
  };

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Output forward(Tape<T>& tape, const Tensor<T>& images, std::span<const int> labels, bool training,
                 bool with_transformer = true);

  Backbone<T>& backbone() { return backbone_; }
  MarginHead<T>& metric_head() { return metric_; }
  TransformerHead<T>& transformer() { return transformer_; }

  // Backbone, then metric head ("metric.class_weights"), then transformer.
  NamedTensors<T> parameters(bool with_transformer = true) const;
  NamedTensors<T> buffers() const;
  // Parameters and buffers, the full serialized state.
  NamedTensors<T> state() const;

 private:
  ModelConfig config_;
  Backbone<T> backbone_;
  MarginHead<T> metric_;
  TransformerHead<T> transformer_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace tml
