#include "tml/model.hpp"

namespace tml {

EncoderConfig ModelConfig::resolved_encoder() const {
  EncoderConfig e = encoder;
  const auto map = backbone.final_map();
  e.model_dim = map.channels;
  e.sequence_length = map.sequence_length();
  return e;
}

void ModelConfig::validate() const {
  backbone.validate();
  resolved_encoder().validate();
  margin.validate();
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2, got " + std::to_string(num_classes));
}

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  backbone_ = Backbone<T>(config_.backbone, seed);
  Rng head_rng = Rng::derive(seed, "metric_head");
  metric_ = MarginHead<T>(config_.num_classes, config_.backbone.embedding_dim, config_.margin, head_rng);
  transformer_ =
      TransformerHead<T>(config_.resolved_encoder(), config_.head_variant, config_.num_classes, config_.margin, seed);
}

template <typename T>
typename Model<T>::Output Model<T>::forward(Tape<T>& tape, const Tensor<T>& images, std::span<const int> labels,
                                            bool training, bool with_transformer) {
  auto bb = backbone_.forward(tape, images, training);
  Output out{bb.feature_map, bb.embedding, {}, {}};
  out.metric_logits = metric_.logits(tape, bb.embedding.values, labels, training);
  if (with_transformer) out.transformer_logits = transformer_.logits(tape, bb.feature_map, labels, training);
  return out;
}

template <typename T>
NamedTensors<T> Model<T>::parameters(bool with_transformer) const {
  auto params = backbone_.parameters();
  metric_.collect(params, "metric");
  if (with_transformer) {
    for (auto& p : transformer_.parameters()) params.push_back(std::move(p));
  }
  return params;
}

template <typename T>
NamedTensors<T> Model<T>::buffers() const {
  auto buffers = backbone_.buffers();
  metric_.collect_buffers(buffers, "metric");
  for (auto& b : transformer_.buffers()) buffers.push_back(std::move(b));
  return buffers;
}

template <typename T>
NamedTensors<T> Model<T>::state() const {
  auto all = parameters();
  for (auto& b : buffers()) all.push_back(std::move(b));
  return all;
}

template class Model<float>;
template class Model<double>;

}  // namespace tml
