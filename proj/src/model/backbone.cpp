#include "tml/backbone.hpp"

namespace tml {

FeatureMapShape BackboneConfig::final_map() const {
  FeatureMapShape s{stage_channels.empty() ? 0 : stage_channels.back(), input_height, input_width};
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    // 3x3 conv, stride 2, padding 1: floor((n - 1) / 2) + 1
    s.height = (s.height - 1) / 2 + 1;
    s.width = (s.width - 1) / 2 + 1;
  }
  return s;
}

std::int64_t BackboneConfig::flatten_dim() const {
  const auto m = final_map();
  return m.channels * m.height * m.width;
}

void BackboneConfig::validate() const {
  if (input_channels < 1 || input_height < 1 || input_width < 1) {
    throw ConfigError("backbone: input size must be positive");
  }
  if (stage_channels.empty()) throw ConfigError("backbone: at least one stage is required");
  if (stage_channels.size() != blocks_per_stage.size()) {
    throw ConfigError("backbone: stage_channels and blocks_per_stage differ in length");
  }
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    if (stage_channels[i] < 1 || blocks_per_stage[i] < 1) {
      throw ConfigError("backbone: stage widths and block counts must be positive");
    }
  }
  if (embedding_dim < 1) throw ConfigError("backbone: embedding_dim must be positive");
  const auto m = final_map();
  if (m.height <= 1 || m.width <= 1) {
    throw ConfigError("backbone: final feature map " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                      " must have height > 1 and width > 1");
  }
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t stride, Rng& rng)
    : bn_in(in_ch),
      conv1(in_ch, out_ch, 3, {.stride = stride, .padding = 1}, rng),
      bn1(out_ch),
      act(out_ch),
      conv2(out_ch, out_ch, 3, {.stride = 1, .padding = 1}, rng),
      bn2(out_ch),
      projection(stride != 1 || in_ch != out_ch) {
  if (projection) {
    shortcut_conv = Conv2d<T>(in_ch, out_ch, 1, {.stride = stride, .padding = 0}, rng);
    shortcut_bn = BatchNorm<T>(out_ch);
  }
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(Tape<T>& tape, const Tensor<T>& x, bool training) {
  auto r = bn_in(tape, x, training);
  r = conv1(tape, r);
  r = bn1(tape, r, training);
  r = act(tape, r);
  r = conv2(tape, r);
  r = bn2(tape, r, training);
  const Tensor<T> shortcut = projection ? shortcut_bn(tape, shortcut_conv(tape, x), training) : x;
  return ops::add(tape, r, shortcut);
}

template <typename T>
void ResidualBlock<T>::collect(NamedTensors<T>& params, const std::string& prefix) const {
  bn_in.collect(params, prefix + ".bn_in");
  conv1.collect(params, prefix + ".conv1");
  bn1.collect(params, prefix + ".bn1");
  act.collect(params, prefix + ".act");
  conv2.collect(params, prefix + ".conv2");
  bn2.collect(params, prefix + ".bn2");
  if (projection) {
    shortcut_conv.collect(params, prefix + ".shortcut_conv");
    shortcut_bn.collect(params, prefix + ".shortcut_bn");
  }
}

template <typename T>
void ResidualBlock<T>::collect_buffers(NamedTensors<T>& buffers, const std::string& prefix) const {
  bn_in.collect_buffers(buffers, prefix + ".bn_in");
  bn1.collect_buffers(buffers, prefix + ".bn1");
  bn2.collect_buffers(buffers, prefix + ".bn2");
  if (projection) shortcut_bn.collect_buffers(buffers, prefix + ".shortcut_bn");
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng::derive(seed, "backbone");
  const std::int64_t c0 = config_.stage_channels.front();
  stem_conv_ = Conv2d<T>(config_.input_channels, c0, 3, {.stride = 1, .padding = 1}, rng);
  stem_bn_ = BatchNorm<T>(c0);
  stem_act_ = PRelu<T>(c0);
  std::int64_t in_ch = c0;
  for (std::size_t s = 0; s < config_.stage_channels.size(); ++s) {
    const std::int64_t out_ch = config_.stage_channels[s];
    for (std::int64_t b = 0; b < config_.blocks_per_stage[s]; ++b) {
      blocks_.emplace_back(in_ch, out_ch, b == 0 ? 2 : 1, rng);
      in_ch = out_ch;
    }
  }
  embed_ = Linear<T>(config_.flatten_dim(), config_.embedding_dim, true, rng);
  if (config_.embedding_batchnorm) embed_bn_ = BatchNorm<T>(config_.embedding_dim);
}

template <typename T>
typename Backbone<T>::Output Backbone<T>::forward(Tape<T>& tape, const Tensor<T>& images, bool training) {
  if (images.rank() != 4 || images.dim(1) != config_.input_channels || images.dim(2) != config_.input_height ||
      images.dim(3) != config_.input_width) {
    throw DimensionError("backbone: input " + shape_str(images.shape()) + " does not match configured [B x " +
                         std::to_string(config_.input_channels) + "x" + std::to_string(config_.input_height) + "x" +
                         std::to_string(config_.input_width) + "]");
  }
  auto h = stem_conv_(tape, images);
  h = stem_bn_(tape, h, training);
  h = stem_act_(tape, h);
  for (auto& block : blocks_) h = block.forward(tape, h, training);

  Output out;
  out.feature_map.values = h;
  // Channel-major, row-major flatten: index = (d * H_f + y) * W_f + x.
  auto flat = ops::reshape(tape, h, Shape{h.dim(0), config_.flatten_dim()});
  auto emb = embed_(tape, flat);
  if (config_.embedding_batchnorm) emb = embed_bn_(tape, emb, training);
  out.embedding.values = emb;
  return out;
}

template <typename T>
NamedTensors<T> Backbone<T>::parameters() const {
  NamedTensors<T> p;
  stem_conv_.collect(p, "backbone.stem_conv");
  stem_bn_.collect(p, "backbone.stem_bn");
  stem_act_.collect(p, "backbone.stem_act");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(p, "backbone.block" + std::to_string(i));
  for (auto& e : embedding_parameters()) p.push_back(e);
  return p;
}

template <typename T>
NamedTensors<T> Backbone<T>::buffers() const {
  NamedTensors<T> b;
  stem_bn_.collect_buffers(b, "backbone.stem_bn");
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect_buffers(b, "backbone.block" + std::to_string(i));
  if (config_.embedding_batchnorm) embed_bn_.collect_buffers(b, "backbone.embed_bn");
  return b;
}

template <typename T>
NamedTensors<T> Backbone<T>::embedding_parameters() const {
  NamedTensors<T> p;
  embed_.collect(p, "backbone.embed");
  if (config_.embedding_batchnorm) embed_bn_.collect(p, "backbone.embed_bn");
  return p;
}

template <typename T>
const Tensor<T>& Backbone<T>::final_conv_kernel() const {
  return blocks_.back().conv2.kernel;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace tml
