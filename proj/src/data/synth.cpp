#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "tml/data.hpp"
#include "tml/error.hpp"

namespace tml::data {

namespace {

using Color = std::array<float, 3>;

struct Ellipse {
  float cx, cy, rx, ry, angle;
  Color color;
  bool contains(float u, float v) const {
    const float c = std::cos(angle), s = std::sin(angle);
    const float du = u - cx, dv = v - cy;
    const float a = (c * du + s * dv) / rx, b = (-s * du + c * dv) / ry;
    return a * a + b * b <= 1.0f;
  }
};

// Class prototype in normalized [0,1]^2 coordinates, painted back to front.
struct Prototype {
  Color background;
  std::vector<Ellipse> layers;

  Color shade(float u, float v) const {
    Color out = background;
    for (const auto& e : layers) {
      if (e.contains(u, v)) out = e.color;
    }
    return out;
  }
};

Color random_color(Rng& rng, float lo, float hi) {
  return {static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi)),
          static_cast<float>(rng.uniform(lo, hi))};
}

Prototype make_prototype(Rng& rng) {
  Prototype p;
  p.background = random_color(rng, 20, 235);
  const float head_cx = static_cast<float>(rng.uniform(0.45, 0.55));
  const float head_cy = static_cast<float>(rng.uniform(0.47, 0.55));
  const float head_rx = static_cast<float>(rng.uniform(0.28, 0.40));
  const float head_ry = static_cast<float>(rng.uniform(0.36, 0.46));
  const Color skin{static_cast<float>(rng.uniform(90, 240)), static_cast<float>(rng.uniform(60, 200)),
                   static_cast<float>(rng.uniform(40, 170))};
  // Hair cap behind the head.
  p.layers.push_back({head_cx, head_cy - static_cast<float>(rng.uniform(0.04, 0.12)), head_rx * 1.08f,
                      head_ry * static_cast<float>(rng.uniform(0.75, 1.0)), 0.0f, random_color(rng, 0, 200)});
  p.layers.push_back({head_cx, head_cy, head_rx, head_ry, 0.0f, skin});

  const float eye_dy = static_cast<float>(rng.uniform(-0.14, -0.04));
  const float eye_dx = static_cast<float>(rng.uniform(0.10, 0.18));
  const float eye_r = static_cast<float>(rng.uniform(0.04, 0.08));
  const float eye_tilt = static_cast<float>(rng.uniform(-0.4, 0.4));
  const Color eye_white = random_color(rng, 190, 255);
  const Color iris = random_color(rng, 0, 140);
  const Color brow = random_color(rng, 0, 120);
  const float brow_dy = static_cast<float>(rng.uniform(0.06, 0.11));
  for (float side : {-1.0f, 1.0f}) {
    const float ex = head_cx + side * eye_dx, ey = head_cy + eye_dy;
    p.layers.push_back({ex, ey, eye_r * 1.4f, eye_r, side * eye_tilt * 0.5f, eye_white});
    p.layers.push_back({ex, ey, eye_r * 0.6f, eye_r * 0.6f, 0.0f, iris});
    p.layers.push_back({ex, ey - brow_dy, eye_r * 1.6f, 0.018f, side * eye_tilt, brow});
  }
  const Color nose = {skin[0] * 0.75f, skin[1] * 0.7f, skin[2] * 0.7f};
  p.layers.push_back({head_cx + static_cast<float>(rng.uniform(-0.03, 0.03)), head_cy + static_cast<float>(rng.uniform(0.02, 0.08)),
                      static_cast<float>(rng.uniform(0.025, 0.05)), static_cast<float>(rng.uniform(0.05, 0.10)), 0.0f, nose});
  p.layers.push_back({head_cx + static_cast<float>(rng.uniform(-0.04, 0.04)), head_cy + static_cast<float>(rng.uniform(0.16, 0.26)),
                      static_cast<float>(rng.uniform(0.07, 0.15)), static_cast<float>(rng.uniform(0.02, 0.05)),
                      static_cast<float>(rng.uniform(-0.25, 0.25)), random_color(rng, 60, 230)});
  // Identity marks anywhere on the canvas.
  const int marks = 2 + static_cast<int>(rng.below(3));
  for (int i = 0; i < marks; ++i) {
    const float r = static_cast<float>(rng.uniform(0.03, 0.08));
    p.layers.push_back({static_cast<float>(rng.uniform(0.1, 0.9)), static_cast<float>(rng.uniform(0.1, 0.9)), r,
                        r * static_cast<float>(rng.uniform(0.6, 1.4)), static_cast<float>(rng.uniform(0, std::numbers::pi)),
                        random_color(rng, 0, 255)});
  }
  return p;
}

// Renders a perturbed sample: 2x2 supersampling of the prototype seen
// through a small random similarity transform about the image centre.
Image render_sample(const Prototype& proto, int size, Rng& rng) {
  const double angle = rng.uniform(-8.0, 8.0) * std::numbers::pi / 180.0;
  const double scale = rng.uniform(0.93, 1.07);
  const double tx = rng.uniform(-0.04, 0.04), ty = rng.uniform(-0.04, 0.04);
  const double gain = rng.uniform(0.85, 1.15);
  const double offset = rng.uniform(-10.0, 10.0);
  const double ca = std::cos(angle) / scale, sa = std::sin(angle) / scale;

  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double u0 = (x + 0.25 + 0.5 * sx) / size - 0.5 - tx;
          const double v0 = (y + 0.25 + 0.5 * sy) / size - 0.5 - ty;
          const double u = ca * u0 + sa * v0 + 0.5;
          const double v = -sa * u0 + ca * v0 + 0.5;
          const Color c = proto.shade(static_cast<float>(u), static_cast<float>(v));
          for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
        }
      }
      for (int k = 0; k < 3; ++k) {
        const double value = acc[static_cast<std::size_t>(k)] * 0.25 * gain + offset + rng.normal() * 5.0;
        img.at(y, x, k) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
    }
  }
  return img;
}

}  // namespace

LabeledDataset synth_generate(int n_classes, int per_class, int image_size, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (per_class < 2) throw ConfigError("synth: need at least 2 images per class");
  if (image_size < 16) throw ConfigError("synth: image size " + std::to_string(image_size) + " is below the minimum of 16");
  LabeledDataset ds;
  for (int c = 0; c < n_classes; ++c) {
    char name[32];
    std::snprintf(name, sizeof(name), "class_%03d", c);
    ds.class_names.emplace_back(name);
    Rng proto_rng = Rng::derive(seed, "synth.prototype." + std::to_string(c));
    const Prototype proto = make_prototype(proto_rng);
    Rng sample_rng = Rng::derive(seed, "synth.samples." + std::to_string(c));
    for (int i = 0; i < per_class; ++i) {
      char file[32];
      std::snprintf(file, sizeof(file), "img_%04d.png", i);
      ds.images.push_back(render_sample(proto, image_size, sample_rng));
      ds.labels.push_back(c);
      ds.names.push_back(std::string(name) + "/" + file);
    }
  }
  return ds;
}

}  // namespace tml::data
