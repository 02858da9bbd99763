#include "tml/metric_heads.hpp"

#include <cmath>
#include <numbers>

namespace tml {

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::softmax: return "softmax";
    case LossKind::cosface: return "cosface";
    case LossKind::arcface: return "arcface";
    case LossKind::adaface: return "adaface";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "softmax") return LossKind::softmax;
  if (name == "cosface") return LossKind::cosface;
  if (name == "arcface") return LossKind::arcface;
  if (name == "adaface") return LossKind::adaface;
  throw ConfigError("unknown loss kind '" + std::string(name) + "' (softmax|cosface|arcface|adaface)");
}

double default_margin(LossKind kind) {
  switch (kind) {
    case LossKind::cosface: return 0.35;
    case LossKind::arcface: return 0.45;
    case LossKind::adaface: return 0.4;
    case LossKind::softmax: return 0.0;
  }
  return 0.0;
}

MarginConfig MarginConfig::for_kind(LossKind kind) {
  MarginConfig c;
  c.kind = kind;
  c.margin = default_margin(kind);
  return c;
}

void MarginConfig::validate() const {
  if (!(scale > 0.0)) throw ConfigError("margin head: scale s must be positive");
  switch (kind) {
    case LossKind::cosface:
    case LossKind::adaface:
      if (margin < 0.0 || margin >= 1.0) throw ConfigError("margin head: margin must lie in [0, 1)");
      break;
    case LossKind::arcface:
      if (margin < 0.0 || margin >= std::numbers::pi / 2) {
        throw ConfigError("margin head: arcface margin must lie in [0, pi/2)");
      }
      break;
    case LossKind::softmax:
      break;
  }
  if (kind == LossKind::adaface && (adaface_h <= 0.0 || adaface_momentum < 0.0 || adaface_momentum > 1.0)) {
    throw ConfigError("margin head: invalid adaface h or momentum");
  }
}

template <typename T>
Tensor<T> cosine_logits(Tape<T>& tape, const Tensor<T>& embedding, const Tensor<T>& class_weights) {
  auto e = ops::l2_normalize(tape, embedding);
  auto w = ops::l2_normalize(tape, class_weights);
  auto cos = ops::linear(tape, e, w, Tensor<T>());
  const T bound = T(1) - static_cast<T>(kCosineBound);
  return ops::clamp(tape, cos, -bound, bound);
}

namespace {

struct TargetValue {
  double value;       // F(cos)
  double derivative;  // dF / dcos
};

TargetValue target_transform(double c, const MarginConfig& cfg, double scaler) {
  const double m = cfg.margin;
  if (cfg.kind == LossKind::softmax || m == 0.0) return {c, 1.0};
  switch (cfg.kind) {
    case LossKind::cosface:
      return {c - m, 1.0};
    case LossKind::arcface: {
      const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
      const double cos_m = std::cos(m), sin_m = std::sin(m);
      const double phi = c * cos_m - sin_t * sin_m;
      const double dphi = sin_t > 0.0 ? cos_m + c * sin_m / sin_t : cos_m;
      if (cfg.easy_margin) return c > 0.0 ? TargetValue{phi, dphi} : TargetValue{c, 1.0};
      // theta + m < pi  <=>  cos > cos(pi - m) = -cos(m)
      if (c > -cos_m) return {phi, dphi};
      return {c - m * sin_m, 1.0};
    }
    case LossKind::adaface: {
      const double g_angle = -m * scaler;
      const double g_add = m * scaler + m;
      const double theta = std::acos(c);
      const double shifted = theta + g_angle;
      const double lo = cfg.adaface_eps, hi = std::numbers::pi - cfg.adaface_eps;
      if (shifted < lo || shifted > hi) {
        return {std::cos(std::clamp(shifted, lo, hi)) - g_add, 0.0};
      }
      const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
      return {std::cos(shifted) - g_add, sin_t > 0.0 ? std::sin(shifted) / sin_t : 1.0};
    }
    case LossKind::softmax:
      break;
  }
  return {c, 1.0};
}

}  // namespace

template <typename T>
Tensor<T> margin_logits(Tape<T>& tape, const Tensor<T>& cosines, std::span<const int> labels,
                        const MarginConfig& config, std::span<const T> adaface_scaler) {
  if (cosines.rank() != 2) throw DimensionError("margin_logits: expected [B x N_c], got " + shape_str(cosines.shape()));
  const std::int64_t rows = cosines.dim(0), classes = cosines.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != rows) {
    throw DimensionError("margin_logits: label count does not match batch");
  }
  for (int y : labels) {
    if (y < 0 || y >= classes) throw IndexError("margin_logits: label " + std::to_string(y) + " out of range");
  }
  if (config.kind == LossKind::adaface && config.margin != 0.0 &&
      static_cast<std::int64_t>(adaface_scaler.size()) != rows) {
    throw ConfigError("margin_logits: adaface needs one norm scaler per row");
  }
  const T s = static_cast<T>(config.scale);
  Tensor<T> out(cosines.shape());
  auto y = out.data();
  const auto c = cosines.data();
  for (std::size_t i = 0; i < c.size(); ++i) y[i] = s * c[i];
  std::vector<T> target_derivative(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::size_t k = static_cast<std::size_t>(r * classes + labels[static_cast<std::size_t>(r)]);
    const double scaler = adaface_scaler.empty() ? 0.0 : static_cast<double>(adaface_scaler[static_cast<std::size_t>(r)]);
    const auto tv = target_transform(static_cast<double>(c[k]), config, scaler);
    // Zero margin: leave s * cos bit-identical.
    if (!(config.kind == LossKind::softmax || config.margin == 0.0)) y[k] = s * static_cast<T>(tv.value);
    target_derivative[static_cast<std::size_t>(r)] = static_cast<T>(tv.derivative);
  }
  tape.check_finite("margin_logits", out);
  if (tape.wants_grad({&cosines})) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape.record("margin_logits", out,
                [cosines, out, lab = std::move(lab), td = std::move(target_derivative), s, rows, classes]() mutable {
                  const auto& dy = out.grad_buffer();
                  auto& dc = cosines.grad_buffer();
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t target = lab[static_cast<std::size_t>(r)];
                    for (std::int64_t j = 0; j < classes; ++j) {
                      const std::size_t k = static_cast<std::size_t>(r * classes + j);
                      const T d = j == target ? td[static_cast<std::size_t>(r)] : T(1);
                      dc[k] += s * d * dy[k];
                    }
                  }
                });
  }
  return out;
}

template <typename T>
Tensor<T> adaface_initial_stats() {
  return Tensor<T>(Shape{2}, std::vector<T>{T(20), T(100)});
}

template <typename T>
std::vector<T> adaface_scaler(const Tensor<T>& embedding, Tensor<T>& stats, const MarginConfig& config, bool update) {
  if (embedding.rank() != 2) throw DimensionError("adaface_scaler: expected [B x d] embedding");
  const std::int64_t rows = embedding.dim(0), d = embedding.dim(1);
  std::vector<double> norms(static_cast<std::size_t>(rows));
  const auto e = embedding.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double ss = 0;
    for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(e[static_cast<std::size_t>(r * d + j)]) * e[static_cast<std::size_t>(r * d + j)];
    norms[static_cast<std::size_t>(r)] = std::clamp(std::sqrt(ss), 1e-3, 100.0);
  }
  auto st = stats.data();
  if (update && rows >= 2) {
    double mean = 0;
    for (double n : norms) mean += n;
    mean /= static_cast<double>(rows);
    double var = 0;
    for (double n : norms) var += (n - mean) * (n - mean);
    const double std_dev = std::sqrt(var / static_cast<double>(rows - 1));
    const double mom = config.adaface_momentum;
    st[0] = static_cast<T>(mom * mean + (1.0 - mom) * static_cast<double>(st[0]));
    st[1] = static_cast<T>(mom * std_dev + (1.0 - mom) * static_cast<double>(st[1]));
  }
  std::vector<T> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double z = (norms[static_cast<std::size_t>(r)] - static_cast<double>(st[0])) /
                     (static_cast<double>(st[1]) + config.adaface_eps) * config.adaface_h;
    out[static_cast<std::size_t>(r)] = static_cast<T>(std::clamp(z, -1.0, 1.0));
  }
  return out;
}

template <typename T>
MarginHead<T>::MarginHead(std::int64_t num_classes, std::int64_t dim, const MarginConfig& config, Rng& rng)
    : config_(config),
      weights_(fan_in_uniform<T>(Shape{num_classes, dim}, dim, rng)),
      adaface_stats_(adaface_initial_stats<T>()) {
  config_.validate();
  if (num_classes < 1) throw ConfigError("margin head: need at least one class");
}

template <typename T>
Tensor<T> MarginHead<T>::logits(Tape<T>& tape, const Tensor<T>& embedding, std::span<const int> labels, bool training) {
  auto cos = cosine_logits(tape, embedding, weights_);
  std::vector<T> scaler;
  if (config_.kind == LossKind::adaface) scaler = adaface_scaler(embedding, adaface_stats_, config_, training);
  return margin_logits<T>(tape, cos, labels, config_, scaler);
}

template <typename T>
Tensor<T> MarginHead<T>::loss(Tape<T>& tape, const Tensor<T>& embedding, std::span<const int> labels, bool training) {
  if (embedding.dim(0) < 1) throw DimensionError("metric loss: empty batch");
  return ops::cross_entropy(tape, logits(tape, embedding, labels, training), labels);
}

template <typename T>
void MarginHead<T>::collect(NamedTensors<T>& params, const std::string& prefix) const {
  params.emplace_back(prefix + ".class_weights", weights_);
}

template <typename T>
void MarginHead<T>::collect_buffers(NamedTensors<T>& buffers, const std::string& prefix) const {
  if (config_.kind == LossKind::adaface) buffers.emplace_back(prefix + ".adaface_stats", adaface_stats_);
}

#define TML_INSTANTIATE(T)                                                                              \
  template Tensor<T> cosine_logits<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> margin_logits<T>(Tape<T>&, const Tensor<T>&, std::span<const int>, const MarginConfig&, \
                                      std::span<const T>);                                              \
  template Tensor<T> adaface_initial_stats<T>();                                                        \
  template std::vector<T> adaface_scaler<T>(const Tensor<T>&, Tensor<T>&, const MarginConfig&, bool);   \
  template class MarginHead<T>;
TML_INSTANTIATE(float)
TML_INSTANTIATE(double)
#undef TML_INSTANTIATE

}  // namespace tml
