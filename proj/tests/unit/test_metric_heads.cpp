#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support.hpp"
#include "tml/grad_check.hpp"
#include "tml/metric_heads.hpp"

using namespace tml;
using tml::testing::bit_equal;
using tml::testing::random_tensor;

namespace {

using TD = Tensor<double>;

MarginConfig config_for(LossKind kind, double margin, double scale = 64.0) {
  MarginConfig c = MarginConfig::for_kind(kind);
  c.margin = margin;
  c.scale = scale;
  return c;
}

double target_logit(LossKind kind, double cos_y, double margin, double scaler = 0.0) {
  auto tape = Tape<double>::inference();
  TD cos(Shape{1, 2}, {cos_y, 0.1});
  std::vector<int> labels{0};
  std::vector<double> n{scaler};
  return margin_logits<double>(tape, cos, labels, config_for(kind, margin), n).data()[0];
}

}  // namespace

TEST_CASE("cosine logits") {
  auto tape = Tape<double>::inference();
  TD emb(Shape{1, 2}, {1, 1});
  TD w(Shape{3, 2}, {1, 0, 3, 3, 0, -2});
  auto c = cosine_logits(tape, emb, w);
  CHECK(c.data()[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(c.data()[1] == 1.0 - kCosineBound);  // parallel, clamped
  CHECK(c.data()[2] == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-12));

  TD orth(Shape{1, 2}, {0, 5});
  CHECK(std::abs(cosine_logits(tape, orth, TD(Shape{1, 2}, {2, 0})).data()[0]) < 1e-6);
  CHECK(cosine_logits(tape, TD(Shape{1, 2}, {-1, 0}), TD(Shape{1, 2}, {1, 0})).data()[0] == -1.0 + kCosineBound);
}

TEST_CASE("cosine logits are invariant to positive embedding scaling") {
  Rng rng(3);
  auto emb = random_tensor<float>(Shape{4, 8}, rng);
  auto w = random_tensor<float>(Shape{5, 8}, rng);
  auto tape = Tape<float>::inference();
  auto base = cosine_logits(tape, emb, w);
  for (float k : {1e-3f, 0.5f, 7.0f, 1e3f}) {
    auto scaled = cosine_logits(tape, ops::scale(tape, emb, k), w);
    for (std::size_t i = 0; i < base.values().size(); ++i) {
      CHECK(std::abs(scaled.data()[i] - base.data()[i]) <= 1e-6f);
    }
  }
}

TEST_CASE("margin logits reference values") {
  // 64 * (0.8 - 0.35): 28.8 up to rounding of the decimal inputs.
  const double cosface = target_logit(LossKind::cosface, 0.8, 0.35);
  CHECK(std::abs(cosface - 28.8) <= 4 * std::numeric_limits<double>::epsilon() * 28.8);
  // theta = 0
  const double arc = target_logit(LossKind::arcface, 1.0, 0.45);
  CHECK(arc == doctest::Approx(64.0 * std::cos(0.45)).epsilon(1e-14));
  CHECK(std::abs(arc - 57.628) < 1e-3);

  // arcface away from the fallback: cos(theta + m)
  const double c = 0.3;
  CHECK(target_logit(LossKind::arcface, c, 0.45) == doctest::Approx(64.0 * std::cos(std::acos(c) + 0.45)).epsilon(1e-12));
  // past theta + m >= pi: cos - m sin m
  CHECK(target_logit(LossKind::arcface, -0.95, 0.45) == doctest::Approx(64.0 * (-0.95 - 0.45 * std::sin(0.45))).epsilon(1e-12));
  // adaface: n = 0 gives g_angle = 0, g_add = m
  CHECK(target_logit(LossKind::adaface, 0.5, 0.4, 0.0) == doctest::Approx(64.0 * (0.5 - 0.4)).epsilon(1e-12));
  // n = 1: cos(theta - m) - 2m
  CHECK(target_logit(LossKind::adaface, 0.5, 0.4, 1.0) ==
        doctest::Approx(64.0 * (std::cos(std::acos(0.5) - 0.4) - 0.8)).epsilon(1e-12));
  // n = -1: cos(theta + m)
  CHECK(target_logit(LossKind::adaface, 0.5, 0.4, -1.0) ==
        doctest::Approx(64.0 * std::cos(std::acos(0.5) + 0.4)).epsilon(1e-12));
}

TEST_CASE("arcface easy margin") {
  auto tape = Tape<double>::inference();
  MarginConfig cfg = config_for(LossKind::arcface, 0.45);
  cfg.easy_margin = true;
  std::vector<int> labels{0, 0};
  TD cos(Shape{2, 2}, {0.5, 0.0, -0.5, 0.0});
  auto y = margin_logits<double>(tape, cos, labels, cfg);
  CHECK(y.data()[0] == doctest::Approx(64.0 * std::cos(std::acos(0.5) + 0.45)).epsilon(1e-12));
  CHECK(y.data()[2] == 64.0 * -0.5);
}

TEST_CASE("zero margin reproduces scaled cosines for every kind") {
  Rng rng(5);
  auto cos = random_tensor(Shape{4, 6}, rng, -0.99, 0.99);
  std::vector<int> labels{0, 5, 2, 2};
  std::vector<double> scaler{0.3, -1.0, 1.0, 0.0};
  auto tape = Tape<double>::inference();
  std::vector<double> expected(cos.values().size());
  for (std::size_t i = 0; i < expected.size(); ++i) expected[i] = 64.0 * cos.data()[i];
  for (auto kind : {LossKind::softmax, LossKind::cosface, LossKind::arcface, LossKind::adaface}) {
    auto y = margin_logits<double>(tape, cos, labels, config_for(kind, 0.0), scaler);
    CHECK_MESSAGE(bit_equal(y.values(), expected), to_string(kind));
  }
}

TEST_CASE("softmax kind ignores the margin; non-target columns are untouched") {
  Rng rng(6);
  auto cos = random_tensor<float>(Shape{3, 5}, rng, -0.99, 0.99);
  std::vector<int> labels{1, 4, 0};
  std::vector<float> scaler{0.5f, -0.2f, 0.9f};
  auto tape = Tape<float>::inference();
  auto ref = margin_logits<float>(tape, cos, labels, config_for(LossKind::softmax, 0.0));
  CHECK(bit_equal(margin_logits<float>(tape, cos, labels, config_for(LossKind::softmax, 0.7)).values(), ref.values()));
  for (auto kind : {LossKind::cosface, LossKind::arcface, LossKind::adaface}) {
    auto y = margin_logits<float>(tape, cos, labels, config_for(kind, 0.4), scaler);
    for (std::int64_t r = 0; r < 3; ++r) {
      for (std::int64_t j = 0; j < 5; ++j) {
        if (j == labels[static_cast<std::size_t>(r)]) continue;
        const auto k = static_cast<std::size_t>(r * 5 + j);
        CHECK(y.data()[k] == 64.0f * cos.data()[k]);
      }
    }
  }
}

TEST_CASE("target logit strictly decreases in the margin") {
  for (double c : {-0.9, -0.4, 0.0, 0.3, 0.7, 0.99}) {
    double prev = target_logit(LossKind::cosface, c, 0.0);
    for (double m = 0.05; m < 1.0; m += 0.05) {
      const double v = target_logit(LossKind::cosface, c, m);
      CHECK(v < prev);
      prev = v;
    }
    const double theta = std::acos(c);
    prev = target_logit(LossKind::arcface, c, 0.0);
    for (double m = 0.05; m < std::numbers::pi / 2 && theta + m < std::numbers::pi; m += 0.05) {
      const double v = target_logit(LossKind::arcface, c, m);
      CHECK(v < prev);
      prev = v;
    }
  }
}

TEST_CASE("configuration validation") {
  CHECK_THROWS_AS(config_for(LossKind::cosface, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(config_for(LossKind::cosface, -0.1).validate(), ConfigError);
  CHECK_THROWS_AS(config_for(LossKind::arcface, 1.6).validate(), ConfigError);
  CHECK_NOTHROW(config_for(LossKind::arcface, 1.5).validate());
  CHECK_THROWS_AS(config_for(LossKind::softmax, 0.0, 0.0).validate(), ConfigError);
  CHECK_THROWS_AS(parse_loss_kind("sphereface"), ConfigError);
  CHECK(parse_loss_kind("adaface") == LossKind::adaface);
  CHECK(default_margin(LossKind::cosface) == 0.35);
  CHECK(default_margin(LossKind::arcface) == 0.45);
  CHECK(default_margin(LossKind::adaface) == 0.4);

  auto tape = Tape<double>::inference();
  TD cos(Shape{1, 2}, {0.1, 0.2});
  std::vector<int> bad{2};
  CHECK_THROWS_AS(margin_logits<double>(tape, cos, bad, config_for(LossKind::cosface, 0.3)), IndexError);
  std::vector<int> ok{1};
  CHECK_THROWS_AS(margin_logits<double>(tape, cos, ok, config_for(LossKind::adaface, 0.3)), ConfigError);
}

TEST_CASE("metric loss degenerate cases") {
  Rng rng(1);
  MarginHead<double> single(1, 4, MarginConfig::for_kind(LossKind::arcface), rng);
  auto tape = Tape<double>::inference();
  auto emb = random_tensor(Shape{3, 4}, rng);
  std::vector<int> zeros{0, 0, 0};
  CHECK(single.loss(tape, emb, zeros, false).item() == 0.0);

  MarginHead<double> head(3, 2, config_for(LossKind::cosface, 0.35), rng);
  auto& w = head.class_weights();
  w.values() = {1, 0, -1, 0.001, -1, -0.001};
  TD aligned(Shape{1, 2}, {2, 0});
  std::vector<int> label{0};
  CHECK(head.loss(tape, aligned, label, false).item() < 1e-20);
}

TEST_CASE("metric loss gradient matches finite differences") {
  // The adaface norm scaler is detached, so it is covered separately below.
  for (auto kind : {LossKind::softmax, LossKind::cosface, LossKind::arcface}) {
    Rng rng(17);
    MarginHead<double> head(3, 5, MarginConfig::for_kind(kind), rng);
    auto emb = random_tensor(Shape{2, 5}, rng);
    std::vector<int> labels{2, 0};
    auto r = grad_check([&](Tape<double>& t) { return head.loss(t, emb, labels, false); },
                        {emb, head.class_weights()});
    CHECK_MESSAGE(r.max_rel_error < 1e-4, to_string(kind));
  }
}

TEST_CASE("adaface gradient with the norm scaler held fixed") {
  Rng rng(19);
  MarginHead<double> head(3, 5, MarginConfig::for_kind(LossKind::adaface), rng);
  auto emb = random_tensor(Shape{2, 5}, rng);
  std::vector<int> labels{1, 2};
  const std::vector<double> scaler{0.6, -0.35};
  auto r = grad_check(
      [&](Tape<double>& t) {
        auto cos = cosine_logits(t, emb, head.class_weights());
        return ops::cross_entropy(t, margin_logits<double>(t, cos, labels, head.config(), scaler), labels);
      },
      {emb, head.class_weights()});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("metric loss is covariant under class permutation") {
  Rng rng(23);
  for (auto kind : {LossKind::cosface, LossKind::arcface, LossKind::adaface}) {
    MarginHead<double> head(5, 4, MarginConfig::for_kind(kind), rng);
    MarginHead<double> permuted = head;
    permuted.class_weights() = head.class_weights().clone();
    auto emb = random_tensor(Shape{6, 4}, rng);
    std::vector<int> labels{0, 1, 2, 3, 4, 2};
    const std::vector<int> perm{3, 0, 4, 1, 2};  // class c moves to perm[c]
    std::vector<int> plabels;
    for (int y : labels) plabels.push_back(perm[static_cast<std::size_t>(y)]);
    for (int c = 0; c < 5; ++c) {
      for (int j = 0; j < 4; ++j) {
        permuted.class_weights().data()[static_cast<std::size_t>(perm[static_cast<std::size_t>(c)] * 4 + j)] =
            head.class_weights().data()[static_cast<std::size_t>(c * 4 + j)];
      }
    }
    auto tape = Tape<double>::inference();
    const double a = head.loss(tape, emb, labels, false).item();
    const double b = permuted.loss(tape, emb, plabels, false).item();
    CHECK(std::abs(a - b) <= 1e-7);
  }
}

TEST_CASE("adaface norm statistics") {
  MarginConfig cfg = MarginConfig::for_kind(LossKind::adaface);
  auto stats = adaface_initial_stats<double>();
  CHECK(stats.data()[0] == 20.0);
  CHECK(stats.data()[1] == 100.0);
  TD emb(Shape{2, 2}, {3, 4, 0, 10});  // norms 5 and 10
  auto frozen = adaface_scaler(emb, stats, cfg, false);
  CHECK(stats.data()[0] == 20.0);
  CHECK(frozen[0] == doctest::Approx((5.0 - 20.0) / (100.0 + 1e-3) * 0.33));
  auto n = adaface_scaler(emb, stats, cfg, true);
  const double mean = 0.01 * 7.5 + 0.99 * 20.0;
  const double sd = 0.01 * std::sqrt(12.5) + 0.99 * 100.0;
  CHECK(stats.data()[0] == doctest::Approx(mean).epsilon(1e-14));
  CHECK(stats.data()[1] == doctest::Approx(sd).epsilon(1e-14));
  CHECK(n[1] == doctest::Approx((10.0 - mean) / (sd + 1e-3) * 0.33).epsilon(1e-14));
  for (double v : n) CHECK(std::abs(v) <= 1.0);

  stats.values() = {1.0, 0.1};
  TD big(Shape{1, 2}, {50, 0});
  CHECK(adaface_scaler(big, stats, cfg, false)[0] == 1.0);
}
