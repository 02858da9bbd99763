#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tml/layers.hpp"

namespace tml {

enum class LossKind { softmax, cosface, arcface, adaface };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);  // ConfigError on unknown names
// 0.35 cosface, 0.45 arcface, 0.4 adaface, 0 softmax.
double default_margin(LossKind kind);

// Cosines are clamped to [-1 + kCosineBound, 1 - kCosineBound] so arccos and
// its derivative stay finite.
inline constexpr double kCosineBound = 1e-7;

struct MarginConfig {
  LossKind kind = LossKind::arcface;
  double scale = 64.0;
  double margin = 0.45;
  // ArcFace: apply the margin only where cos > 0 instead of the
  // cos - m*sin(m) fallback past theta + m >= pi.
  bool easy_margin = false;
  // AdaFace norm-adaptive margin.
  double adaface_h = 0.33;
  double adaface_momentum = 0.01;
  double adaface_eps = 1e-3;

  static MarginConfig for_kind(LossKind kind);
  void validate() const;
};

// cos(theta_j) between each embedding row and each class weight row, both
// l2-normalized, clamped to the cosine bound. emb [B x d], weight [N_c x d].
template <typename T>
Tensor<T> cosine_logits(Tape<T>& tape, const Tensor<T>& embedding, const Tensor<T>& class_weights);

// s * cos(theta_j) for non-target columns and s * F(cos theta_y) for the
// target column:
//   softmax  F = cos                    (margin ignored)
//   cosface  F = cos - m
//   arcface  F = cos(theta + m), or cos - m*sin(m) once theta + m >= pi
//   adaface  F = cos(clip(theta - m*n, eps, pi - eps)) - (m*n + m)
// where n is the per-row norm scaler in [-1, 1] (`adaface_scaler`, adaface
// only). A zero margin reduces every kind to s * cos exactly.
template <typename T>
Tensor<T> margin_logits(Tape<T>& tape, const Tensor<T>& cosines, std::span<const int> labels,
                        const MarginConfig& config, std::span<const T> adaface_scaler = {});

// Norm-adaptive state of the AdaFace margin: running mean and std of the
// embedding norms, stored as [mean, std].
template <typename T>
Tensor<T> adaface_initial_stats();

// Per-row n = clip((||e|| - mean) / (std + eps) * h, -1, 1) with detached
// norms. In training the running statistics first absorb the batch
// statistics with the configured momentum.
template <typename T>
std::vector<T> adaface_scaler(const Tensor<T>& embedding, Tensor<T>& stats, const MarginConfig& config,
                              bool update);

// Class-weight matrix plus margin configuration. Produces O_Nc from an
// embedding.
template <typename T>
class MarginHead {
 public:
  MarginHead() = default;
  MarginHead(std::int64_t num_classes, std::int64_t dim, const MarginConfig& config, Rng& rng);

  Tensor<T> logits(Tape<T>& tape, const Tensor<T>& embedding, std::span<const int> labels, bool training);
  // cross_entropy(margin_logits(cosine_logits(emb)))
  Tensor<T> loss(Tape<T>& tape, const Tensor<T>& embedding, std::span<const int> labels, bool training);

  const MarginConfig& config() const { return config_; }
  Tensor<T>& class_weights() { return weights_; }
  const Tensor<T>& class_weights() const { return weights_; }
  Tensor<T>& adaface_stats() { return adaface_stats_; }

  void collect(NamedTensors<T>& params, const std::string& prefix) const;
  void collect_buffers(NamedTensors<T>& buffers, const std::string& prefix) const;

 private:
  MarginConfig config_;
  Tensor<T> weights_;        // [N_c x d]
  Tensor<T> adaface_stats_;  // [2]
};

extern template class MarginHead<float>;
extern template class MarginHead<double>;

}  // namespace tml
