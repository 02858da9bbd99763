#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tml/grad_check.hpp"
#include "tml/transformer_head.hpp"

using namespace tml;
using tml::testing::bit_equal;
using tml::testing::random_tensor;

namespace {

EncoderConfig small_encoder(std::int64_t dim = 8, std::int64_t heads = 2, std::int64_t layers = 2) {
  EncoderConfig c;
  c.model_dim = dim;
  c.num_heads = heads;
  c.num_layers = layers;
  return c;
}

// Permutes the spatial positions of a [B x D x H x W] map (row-major index).
template <typename T>
Tensor<T> permute_positions(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  Tensor<T> out(x.shape());
  const std::size_t S = perm.size();
  const std::size_t planes = x.values().size() / S;
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t s = 0; s < S; ++s) out.data()[p * S + perm[s]] = x.data()[p * S + s];
  }
  return out;
}

}  // namespace

TEST_CASE("to_sequence layout and round trip") {
  Rng rng(1);
  FeatureMap<float> fmap{random_tensor<float>(Shape{2, 128, 4, 4}, rng)};
  auto tape = Tape<float>::inference();
  auto seq = to_sequence(tape, fmap);
  CHECK(seq.shape() == Shape{2, 16, 128});
  for (std::int64_t b = 0; b < 2; ++b) {
    for (std::int64_t h = 0; h < 4; ++h) {
      for (std::int64_t w = 0; w < 4; ++w) {
        for (std::int64_t d = 0; d < 128; d += 17) {
          const auto src = static_cast<std::size_t>(((b * 128 + d) * 4 + h) * 4 + w);
          const auto dst = static_cast<std::size_t>((b * 16 + h * 4 + w) * 128 + d);
          CHECK(seq.data()[dst] == fmap.values.data()[src]);
        }
      }
    }
  }
  auto back = ops::reshape(tape, ops::transpose(tape, seq, 1, 2), Shape{2, 128, 4, 4});
  CHECK(bit_equal(back.values(), fmap.values.values()));

  FeatureMap<float> big{Tensor<float>(Shape{1, 512, 7, 7})};
  CHECK(to_sequence(tape, big).shape() == Shape{1, 49, 512});
  FeatureMap<float> point{Tensor<float>(Shape{1, 4, 1, 1})};
  CHECK_THROWS_AS(to_sequence(tape, point), StructuralError);
}

TEST_CASE("to_sequence gradient is the inverse scatter") {
  Rng rng(2);
  FeatureMap<double> fmap{random_tensor(Shape{2, 3, 2, 3}, rng)};
  auto w = random_tensor(Shape{2, 6, 3}, rng);
  auto r = grad_check([&](Tape<double>& t) { return ops::sum_all(t, ops::mul(t, to_sequence(t, fmap), w)); },
                      {fmap.values});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("mean_pool") {
  auto tape = Tape<double>::inference();
  Tensor<double> two(Shape{1, 2, 2}, {1, 3, 3, 1});
  auto p = mean_pool(tape, two);
  CHECK(p.values() == std::vector<double>{2, 2});
  Tensor<double> same(Shape{1, 5, 3});
  for (std::size_t i = 0; i < 15; ++i) same.data()[i] = static_cast<double>(i % 3) - 0.5;
  CHECK(mean_pool(tape, same).values() == std::vector<double>{-0.5, 0.5, 1.5});

  Tape<double> rec;
  Tensor<double> x(Shape{1, 4, 2}, 1.0, true);
  rec.backward(ops::sum_all(rec, mean_pool(rec, x)));
  for (double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("encoder config validation") {
  auto c = small_encoder(10, 4);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_encoder();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(small_encoder(16).ff_dim() == 64);
  CHECK_THROWS_AS(parse_head_variant("mlp"), ConfigError);
  CHECK(parse_positional_encoding("learned") == PositionalEncoding::learned);

  Rng rng(0);
  TransformerEncoder<float> enc(small_encoder(), rng);
  auto tape = Tape<float>::inference();
  CHECK_THROWS_AS(enc.forward(tape, Tensor<float>(Shape{1, 3, 6}), false), ConfigError);
}

TEST_CASE("encode preserves shape and attention rows sum to one") {
  for (auto [dim, heads, layers, S] : std::vector<std::array<std::int64_t, 4>>{{8, 2, 1, 5}, {12, 3, 2, 16}, {16, 4, 3, 9}}) {
    Rng rng(static_cast<std::uint64_t>(dim));
    TransformerEncoder<float> enc(small_encoder(dim, heads, layers), rng);
    auto x = random_tensor<float>(Shape{3, S, dim}, rng);
    auto tape = Tape<float>::inference();
    AttentionCapture<float> cap;
    auto y = enc.forward(tape, x, false, nullptr, &cap);
    CHECK(y.shape() == x.shape());
    REQUIRE(cap.size() == static_cast<std::size_t>(layers));
    for (const auto& a : cap) {
      CHECK(a.shape() == Shape{3, heads, S, S});
      const auto v = a.data();
      for (std::size_t row = 0; row < v.size(); row += static_cast<std::size_t>(S)) {
        double sum = 0;
        for (std::int64_t j = 0; j < S; ++j) sum += v[row + static_cast<std::size_t>(j)];
        CHECK(std::abs(sum - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_CASE("single position attends to itself with weight one") {
  Rng rng(3);
  TransformerEncoder<double> enc(small_encoder(), rng);
  auto x = random_tensor(Shape{2, 1, 8}, rng);
  auto tape = Tape<double>::inference();
  AttentionCapture<double> cap;
  enc.forward(tape, x, false, nullptr, &cap);
  for (const auto& a : cap) {
    for (double v : a.values()) CHECK(v == 1.0);
  }
}

TEST_CASE("zero output projections leave a layernorm cascade") {
  Rng rng(4);
  TransformerEncoder<double> enc(small_encoder(8, 2, 2), rng);
  for (auto& layer : enc.layers()) {
    for (auto* t : {&layer.attn_out.weight, &layer.attn_out.bias, &layer.ff2.weight, &layer.ff2.bias}) {
      for (auto& v : t->data()) v = 0.0;
    }
  }
  auto x = random_tensor(Shape{2, 5, 8}, rng);
  auto tape = Tape<double>::inference();
  auto y = enc.forward(tape, x, false);
  Tensor<double> gain(Shape{8}, 1.0), bias(Shape{8}, 0.0);
  auto expected = x;
  for (int i = 0; i < 4; ++i) expected = ops::layernorm(tape, expected, gain, bias);
  for (std::size_t i = 0; i < y.values().size(); ++i) CHECK(y.data()[i] == doctest::Approx(expected.data()[i]).epsilon(1e-12));
}

TEST_CASE("transformer logits are invariant to position permutations without positional encoding") {
  Rng rng(5);
  EncoderConfig cfg = small_encoder(128, 4, 2);
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = i;
  for (auto variant : {HeadVariant::linear, HeadVariant::metric}) {
    TransformerHead<float> head(cfg, variant, 10, MarginConfig::for_kind(LossKind::arcface), 9);
    FeatureMap<float> fmap{random_tensor<float>(Shape{3, 128, 4, 4}, rng)};
    std::vector<int> labels{1, 7, 3};
    auto tape = Tape<float>::inference();
    auto base = head.logits(tape, fmap, labels, false);
    CHECK(base.shape() == Shape{3, 10});
    for (int trial = 0; trial < 3; ++trial) {
      rng.shuffle(perm.begin(), perm.end());
      FeatureMap<float> shuffled{permute_positions(fmap.values, perm)};
      auto y = head.logits(tape, shuffled, labels, false);
      // Metric logits are s * cos; the 1e-5 bound applies to the cosines.
      const float tol = variant == HeadVariant::metric ? 1e-5f * 64.0f : 1e-5f;
      for (std::size_t i = 0; i < y.values().size(); ++i) CHECK(std::abs(y.data()[i] - base.data()[i]) <= tol);
    }
  }
}

TEST_CASE("learned positional encoding breaks permutation invariance") {
  Rng rng(6);
  EncoderConfig cfg = small_encoder(8, 2, 1);
  cfg.positional_encoding = PositionalEncoding::learned;
  cfg.sequence_length = 4;
  TransformerHead<double> head(cfg, HeadVariant::linear, 3, MarginConfig{}, 1);
  for (auto& v : head.positional().data()) v = rng.uniform(-1, 1);
  FeatureMap<double> fmap{random_tensor(Shape{1, 8, 2, 2}, rng)};
  auto tape = Tape<double>::inference();
  auto a = head.logits(tape, fmap, {}, false);
  FeatureMap<double> swapped{permute_positions(fmap.values, {1, 0, 2, 3})};
  auto b = head.logits(tape, swapped, {}, false);
  CHECK_FALSE(bit_equal(a.values(), b.values()));
  bool named = false;
  for (const auto& [name, t] : head.parameters()) named |= name == "transformer.positional";
  CHECK(named);
}

TEST_CASE("linear head behavior") {
  Rng rng(7);
  EncoderConfig cfg = small_encoder(4, 2, 1);
  TransformerHead<double> head(cfg, HeadVariant::linear, 4, MarginConfig{}, 3);
  FeatureMap<double> fmap{random_tensor(Shape{2, 4, 2, 3}, rng)};
  auto tape = Tape<double>::inference();
  auto& lin = head.linear_head();
  for (auto& v : lin.weight.data()) v = 0;
  for (auto& v : lin.bias.data()) v = 0;
  auto zero = head.logits(tape, fmap, {}, false);
  for (double v : zero.values()) CHECK(v == 0.0);
  for (std::int64_t i = 0; i < 4; ++i) lin.weight.data()[static_cast<std::size_t>(i * 4 + i)] = 1;
  auto pooled = head.pooled(tape, fmap, false);
  std::vector<int> ignored{99, -5};  // the linear variant never reads labels
  CHECK(bit_equal(head.logits(tape, fmap, ignored, false).values(), pooled.values()));
}

TEST_CASE("metric head variant with zero margin gives scaled cosines of the pooled vector") {
  Rng rng(8);
  MarginConfig mc = MarginConfig::for_kind(LossKind::cosface);
  mc.margin = 0.0;
  TransformerHead<double> head(small_encoder(6, 3, 1), HeadVariant::metric, 5, mc, 4);
  FeatureMap<double> fmap{random_tensor(Shape{2, 6, 2, 2}, rng)};
  auto tape = Tape<double>::inference();
  std::vector<int> labels{0, 4};
  auto y = head.logits(tape, fmap, labels, false);
  auto cos = cosine_logits(tape, head.pooled(tape, fmap, false), head.metric_head().class_weights());
  for (std::size_t i = 0; i < y.values().size(); ++i) CHECK(y.data()[i] == 64.0 * cos.data()[i]);
  CHECK_THROWS_AS(head.logits(tape, fmap, {}, false), ConfigError);
}

TEST_CASE("transformer head gradients match finite differences") {
  for (auto variant : {HeadVariant::linear, HeadVariant::metric}) {
    Rng rng(9);
    TransformerHead<double> head(small_encoder(4, 2, 1), variant, 3, MarginConfig::for_kind(LossKind::arcface), 5);
    FeatureMap<double> fmap{random_tensor(Shape{2, 4, 2, 2}, rng)};
    std::vector<int> labels{2, 0};
    std::vector<Tensor<double>> inputs{fmap.values};
    for (auto& [name, t] : head.parameters()) inputs.push_back(t);
    auto r = grad_check(
        [&](Tape<double>& t) { return ops::cross_entropy(t, head.logits(t, fmap, labels, true), labels); }, inputs);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, to_string(variant));
  }
}

TEST_CASE("dropout is inactive at rate zero and in eval mode") {
  Rng rng(10);
  EncoderConfig cfg = small_encoder(8, 2, 1);
  TransformerHead<float> plain(cfg, HeadVariant::linear, 3, MarginConfig{}, 2);
  cfg.dropout = 0.5;
  TransformerHead<float> dropped(cfg, HeadVariant::linear, 3, MarginConfig{}, 2);
  FeatureMap<float> fmap{random_tensor<float>(Shape{2, 8, 2, 2}, rng)};
  auto tape = Tape<float>::inference();
  auto a = plain.logits(tape, fmap, {}, true);
  CHECK(bit_equal(a.values(), plain.logits(tape, fmap, {}, false).values()));
  CHECK(bit_equal(a.values(), dropped.logits(tape, fmap, {}, false).values()));
  CHECK_FALSE(bit_equal(a.values(), dropped.logits(tape, fmap, {}, true).values()));
}
