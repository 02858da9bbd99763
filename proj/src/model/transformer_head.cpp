#include "tml/transformer_head.hpp"

#include <cmath>

namespace tml {

std::string_view to_string(PositionalEncoding pe) { return pe == PositionalEncoding::learned ? "learned" : "none"; }
std::string_view to_string(HeadVariant v) { return v == HeadVariant::metric ? "metric" : "linear"; }

PositionalEncoding parse_positional_encoding(std::string_view name) {
  if (name == "none") return PositionalEncoding::none;
  if (name == "learned") return PositionalEncoding::learned;
  throw ConfigError("unknown positional encoding '" + std::string(name) + "' (none|learned)");
}

HeadVariant parse_head_variant(std::string_view name) {
  if (name == "linear") return HeadVariant::linear;
  if (name == "metric") return HeadVariant::metric;
  throw ConfigError("unknown transformer head variant '" + std::string(name) + "' (linear|metric)");
}

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("encoder: num_layers must be positive");
  if (num_heads < 1 || model_dim < 1) throw ConfigError("encoder: num_heads and model_dim must be positive");
  if (model_dim % num_heads != 0) {
    throw ConfigError("encoder: model_dim " + std::to_string(model_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
  if (positional_encoding == PositionalEncoding::learned && sequence_length < 1) {
    throw ConfigError("encoder: learned positional encoding needs the sequence length");
  }
}

template <typename T>
Tensor<T> to_sequence(Tape<T>& tape, const FeatureMap<T>& fmap) {
  const auto& x = fmap.values;
  if (x.rank() != 4) throw DimensionError("to_sequence: expected [B x D x H x W], got " + shape_str(x.shape()));
  if (x.dim(2) <= 1 || x.dim(3) <= 1) {
    throw StructuralError("to_sequence: feature map " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                          " is past the split point (height and width must exceed 1)");
  }
  auto flat = ops::reshape(tape, x, Shape{x.dim(0), x.dim(1), x.dim(2) * x.dim(3)});
  return ops::transpose(tape, flat, 1, 2);
}

template <typename T>
Tensor<T> mean_pool(Tape<T>& tape, const Tensor<T>& seq) {
  if (seq.rank() != 3 || seq.dim(1) < 1) throw DimensionError("mean_pool: expected [B x S x D] with S >= 1");
  return ops::mean(tape, seq, 1);
}

namespace {

// x [B x S x D] + pe [S x D] broadcast over the batch.
template <typename T>
Tensor<T> add_positional(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& pe) {
  if (pe.rank() != 2 || x.dim(1) != pe.dim(0) || x.dim(2) != pe.dim(1)) {
    throw DimensionError("positional encoding " + shape_str(pe.shape()) + " does not match sequence " +
                         shape_str(x.shape()));
  }
  Tensor<T> out(x.shape());
  const std::size_t per = pe.values().size();
  const auto xv = x.data();
  const auto pv = pe.data();
  auto y = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] + pv[i % per];
  if (tape.wants_grad({&x, &pe})) {
    tape.record("add_positional", out, [x, pe, out, per]() mutable {
      const auto& dy = out.grad_buffer();
      if (x.requires_grad()) {
        auto& dx = x.grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
      }
      if (pe.requires_grad()) {
        auto& dp = pe.grad_buffer();
        for (std::size_t i = 0; i < dy.size(); ++i) dp[i % per] += dy[i];
      }
    });
  }
  return out;
}

// Inverted dropout: surviving elements are scaled by 1 / (1 - rate).
template <typename T>
Tensor<T> dropout(Tape<T>& tape, const Tensor<T>& x, double rate, bool training, Rng* rng) {
  if (!training || rate <= 0.0 || rng == nullptr) return x;
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : mask.data()) v = rng->bernoulli(rate) ? T(0) : keep_scale;
  return ops::mul(tape, x, mask);
}

}  // namespace

template <typename T>
EncoderLayer<T>::EncoderLayer(const EncoderConfig& cfg, Rng& rng)
    : qkv(cfg.model_dim, 3 * cfg.model_dim, true, rng),
      attn_out(cfg.model_dim, cfg.model_dim, true, rng),
      norm1(cfg.model_dim),
      ff1(cfg.model_dim, cfg.ff_dim(), true, rng),
      ff2(cfg.ff_dim(), cfg.model_dim, true, rng),
      norm2(cfg.model_dim) {}

template <typename T>
void EncoderLayer<T>::collect(NamedTensors<T>& params, const std::string& prefix) const {
  qkv.collect(params, prefix + ".qkv");
  attn_out.collect(params, prefix + ".attn_out");
  norm1.collect(params, prefix + ".norm1");
  ff1.collect(params, prefix + ".ff1");
  ff2.collect(params, prefix + ".ff2");
  norm2.collect(params, prefix + ".norm2");
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(const EncoderConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  for (std::int64_t i = 0; i < config_.num_layers; ++i) layers_.emplace_back(config_, rng);
}

template <typename T>
Tensor<T> TransformerEncoder<T>::forward(Tape<T>& tape, const Tensor<T>& seq, bool training, Rng* dropout_rng,
                                         AttentionCapture<T>* capture) const {
  if (seq.rank() != 3 || seq.dim(2) != config_.model_dim) {
    throw ConfigError("encode: sequence " + shape_str(seq.shape()) + " does not match model_dim " +
                      std::to_string(config_.model_dim));
  }
  const std::int64_t B = seq.dim(0), S = seq.dim(1), D = config_.model_dim, H = config_.num_heads, dh = D / H;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const double p = config_.dropout;
  if (capture) capture->clear();

  auto x = ops::reshape(tape, seq, Shape{B * S, D});
  for (const auto& layer : layers_) {
    auto qkv = layer.qkv(tape, x);                                       // [BS x 3D]
    qkv = ops::reshape(tape, qkv, Shape{B, S, 3, H, dh});
    qkv = ops::permute(tape, qkv, {2, 0, 3, 1, 4});                      // [3 x B x H x S x dh]
    auto head_view = [&](std::int64_t i) {
      return ops::reshape(tape, ops::slice(tape, qkv, 0, i, 1), Shape{B * H, S, dh});
    };
    auto q = head_view(0), k = head_view(1), v = head_view(2);
    auto scores = ops::scale(tape, ops::bmm(tape, q, ops::transpose(tape, k, 1, 2)), inv_sqrt);
    auto attn = ops::softmax(tape, scores, -1);                          // [BH x S x S]
    if (capture) capture->push_back(Tensor<T>(Shape{B, H, S, S}, attn.values()));
    attn = dropout(tape, attn, p, training, dropout_rng);
    auto ctx = ops::bmm(tape, attn, v);                                  // [BH x S x dh]
    ctx = ops::reshape(tape, ctx, Shape{B, H, S, dh});
    ctx = ops::permute(tape, ctx, {0, 2, 1, 3});
    ctx = ops::reshape(tape, ctx, Shape{B * S, D});
    auto a = dropout(tape, layer.attn_out(tape, ctx), p, training, dropout_rng);
    x = layer.norm1(tape, ops::add(tape, x, a));

    auto f = layer.ff2(tape, ops::relu(tape, layer.ff1(tape, x)));
    f = dropout(tape, f, p, training, dropout_rng);
    x = layer.norm2(tape, ops::add(tape, x, f));
  }
  return ops::reshape(tape, x, Shape{B, S, D});
}

template <typename T>
void TransformerEncoder<T>::collect(NamedTensors<T>& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(params, prefix + ".layer" + std::to_string(i));
}

template <typename T>
TransformerHead<T>::TransformerHead(const EncoderConfig& config, HeadVariant variant, std::int64_t num_classes,
                                    const MarginConfig& metric_config, std::uint64_t seed)
    : config_(config), variant_(variant), dropout_rng_(Rng::derive(seed, "transformer.dropout")) {
  config_.validate();
  if (num_classes < 1) throw ConfigError("transformer head: need at least one class");
  Rng rng = Rng::derive(seed, "transformer");
  encoder_ = TransformerEncoder<T>(config_, rng);
  if (config_.positional_encoding == PositionalEncoding::learned) {
    // Small init so the encoding starts as a perturbation of the content.
    positional_ = Tensor<T>(Shape{config_.sequence_length, config_.model_dim}, T(0), true);
    for (auto& v : positional_.data()) v = static_cast<T>(rng.normal() * 0.02);
  }
  if (variant_ == HeadVariant::linear) {
    linear_ = Linear<T>(config_.model_dim, num_classes, true, rng);
  } else {
    metric_ = MarginHead<T>(num_classes, config_.model_dim, metric_config, rng);
  }
}

template <typename T>
Tensor<T> TransformerHead<T>::pooled(Tape<T>& tape, const FeatureMap<T>& fmap, bool training,
                                     AttentionCapture<T>* capture) {
  auto seq = to_sequence(tape, fmap);
  if (config_.positional_encoding == PositionalEncoding::learned) seq = add_positional(tape, seq, positional_);
  auto encoded = encoder_.forward(tape, seq, training, &dropout_rng_, capture);
  return mean_pool(tape, encoded);
}

template <typename T>
Tensor<T> TransformerHead<T>::logits(Tape<T>& tape, const FeatureMap<T>& fmap, std::span<const int> labels,
                                     bool training, AttentionCapture<T>* capture) {
  auto p = pooled(tape, fmap, training, capture);
  if (variant_ == HeadVariant::linear) return linear_(tape, p);
  if (static_cast<std::int64_t>(labels.size()) != p.dim(0)) {
    throw ConfigError("transformer head: metric variant requires one label per sample");
  }
  return metric_.logits(tape, p, labels, training);
}

template <typename T>
NamedTensors<T> TransformerHead<T>::parameters() const {
  NamedTensors<T> p;
  encoder_.collect(p, "transformer.encoder");
  if (config_.positional_encoding == PositionalEncoding::learned) p.emplace_back("transformer.positional", positional_);
  if (variant_ == HeadVariant::linear) {
    linear_.collect(p, "transformer.head");
  } else {
    metric_.collect(p, "transformer.head");
  }
  return p;
}

template <typename T>
NamedTensors<T> TransformerHead<T>::buffers() const {
  NamedTensors<T> b;
  if (variant_ == HeadVariant::metric) metric_.collect_buffers(b, "transformer.head");
  return b;
}

#define TML_INSTANTIATE(T)                                                    \
  template Tensor<T> to_sequence<T>(Tape<T>&, const FeatureMap<T>&);          \
  template Tensor<T> mean_pool<T>(Tape<T>&, const Tensor<T>&);                \
  template struct EncoderLayer<T>;                                            \
  template class TransformerEncoder<T>;                                       \
  template class TransformerHead<T>;
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml
