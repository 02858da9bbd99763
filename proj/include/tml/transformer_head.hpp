#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "tml/backbone.hpp"
#include "tml/metric_heads.hpp"

namespace tml {

enum class PositionalEncoding { none, learned };
enum class HeadVariant { linear, metric };

std::string_view to_string(PositionalEncoding pe);
std::string_view to_string(HeadVariant v);
PositionalEncoding parse_positional_encoding(std::string_view name);
HeadVariant parse_head_variant(std::string_view name);

struct EncoderConfig {
  std::int64_t num_layers = 2;
  std::int64_t num_heads = 4;
  std::int64_t model_dim = 128;       // D_f
  std::int64_t feedforward_dim = 0;   // 0 selects 4 * model_dim
  double dropout = 0.0;
  PositionalEncoding positional_encoding = PositionalEncoding::none;
  std::int64_t sequence_length = 16;  // S_f, sizes the learned encoding

  std::int64_t ff_dim() const { return feedforward_dim > 0 ? feedforward_dim : 4 * model_dim; }
  void validate() const;
};

// [B x D_f x H_f x W_f] -> [B x S_f x D_f]; position (h, w) becomes sequence
// index h * W_f + w. A 1x1 map violates the split rule (StructuralError).
template <typename T>
Tensor<T> to_sequence(Tape<T>& tape, const FeatureMap<T>& fmap);

// Arithmetic mean over the S_f positions: [B x S x D] -> [B x D].
template <typename T>
Tensor<T> mean_pool(Tape<T>& tape, const Tensor<T>& seq);

// Softmax attention weights of each layer, [B x heads x S x S], filled when
// passed to encode.
template <typename T>
using AttentionCapture = std::vector<Tensor<T>>;

template <typename T>
struct EncoderLayer {
  Linear<T> qkv;        // D -> 3D, shared across heads
  Linear<T> attn_out;   // D -> D
  LayerNorm<T> norm1;
  Linear<T> ff1;        // D -> F
  Linear<T> ff2;        // F -> D
  LayerNorm<T> norm2;

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& cfg, Rng& rng);
  void collect(NamedTensors<T>& params, const std::string& prefix) const;
};

// Post-norm encoder stack: x = LN(x + MHA(x)); x = LN(x + FF(x)).
template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  std::vector<EncoderLayer<T>>& layers() { return layers_; }

  // seq [B x S x D]. Dropout draws from `dropout_rng` in training mode when
  // the rate is positive.
  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& seq, bool training, Rng* dropout_rng = nullptr,
                    AttentionCapture<T>* capture = nullptr) const;
  void collect(NamedTensors<T>& params, const std::string& prefix) const;

 private:
  EncoderConfig config_;
  std::vector<EncoderLayer<T>> layers_;
};

// Branch 2: to_sequence -> (positional encoding) -> encode -> mean_pool ->
// linear or metric head, producing T_Nc.
template <typename T>
class TransformerHead {
 public:
  TransformerHead() = default;
  TransformerHead(const EncoderConfig& config, HeadVariant variant, std::int64_t num_classes,
                  const MarginConfig& metric_config, std::uint64_t seed);

  HeadVariant variant() const { return variant_; }
  TransformerEncoder<T>& encoder() { return encoder_; }
  Linear<T>& linear_head() { return linear_; }
  MarginHead<T>& metric_head() { return metric_; }
  Tensor<T>& positional() { return positional_; }

  // Labels are required for the metric variant and ignored by the linear one.
  Tensor<T> logits(Tape<T>& tape, const FeatureMap<T>& fmap, std::span<const int> labels, bool training,
                   AttentionCapture<T>* capture = nullptr);
  // Mean-pooled encoder output T_eps.
  Tensor<T> pooled(Tape<T>& tape, const FeatureMap<T>& fmap, bool training, AttentionCapture<T>* capture = nullptr);

  NamedTensors<T> parameters() const;
  NamedTensors<T> buffers() const;
  Rng& dropout_rng() { return dropout_rng_; }

 private:
  EncoderConfig config_;
  HeadVariant variant_ = HeadVariant::linear;
  TransformerEncoder<T> encoder_;
  Tensor<T> positional_;  // [S_f x D_f], learned encoding only
  Linear<T> linear_;      // L_2: D_f -> N_c with bias
  MarginHead<T> metric_;
  Rng dropout_rng_{0};
};

extern template class TransformerEncoder<float>;
extern template class TransformerEncoder<double>;
extern template class TransformerHead<float>;
extern template class TransformerHead<double>;

}  // namespace tml
