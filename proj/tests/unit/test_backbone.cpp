#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tml/backbone.hpp"
#include "tml/grad_check.hpp"

using namespace tml;
using tml::testing::bit_equal;
using tml::testing::random_tensor;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.input_height = 16;
  c.input_width = 16;
  c.stage_channels = {4, 8};
  c.blocks_per_stage = {1, 1};
  c.embedding_dim = 6;
  return c;
}

}  // namespace

TEST_CASE("final map shape follows the stride schedule") {
  BackboneConfig desk;
  auto m = desk.final_map();
  CHECK(m.channels == 128);
  CHECK(m.height == 4);
  CHECK(m.width == 4);
  CHECK(m.sequence_length() == 16);
  CHECK(desk.flatten_dim() == 128 * 16);

  BackboneConfig faithful;
  faithful.input_height = faithful.input_width = 112;
  faithful.stage_channels = {64, 128, 256, 512};
  faithful.blocks_per_stage = {1, 1, 1, 1};
  faithful.embedding_dim = 512;
  auto f = faithful.final_map();
  CHECK(f.height == 7);
  CHECK(f.width == 7);
  CHECK(f.sequence_length() == 49);
}

TEST_CASE("forward produces the statically derived shapes") {
  for (auto stages : {std::vector<std::int64_t>{4}, {4, 6}, {3, 5, 7}}) {
    BackboneConfig c = small_config();
    c.input_height = 20;
    c.input_width = 24;
    c.stage_channels = stages;
    c.blocks_per_stage.assign(stages.size(), 1);
    if (stages.size() == 1) c.blocks_per_stage = {2};
    Backbone<float> net(c, 3);
    Rng rng(9);
    auto x = random_tensor<float>(Shape{2, 3, 20, 24}, rng);
    auto tape = Tape<float>::inference();
    auto out = net.forward(tape, x, false);
    auto m = c.final_map();
    CHECK(out.feature_map.values.shape() == Shape{2, m.channels, m.height, m.width});
    CHECK(out.embedding.values.shape() == Shape{2, c.embedding_dim});
  }
}

TEST_CASE("desk backbone runs on 3x32x32") {
  Backbone<float> net(BackboneConfig{}, 1);
  Rng rng(2);
  auto x = random_tensor<float>(Shape{2, 3, 32, 32}, rng);
  auto tape = Tape<float>::inference();
  auto out = net.forward(tape, x, false);
  CHECK(out.feature_map.values.shape() == Shape{2, 128, 4, 4});
  CHECK(out.embedding.values.shape() == Shape{2, 64});
}

TEST_CASE("invalid configurations are rejected") {
  BackboneConfig c = small_config();
  c.stage_channels = {4, 4, 4, 4};
  c.blocks_per_stage = {1, 1, 1, 1};  // 16 -> 1x1
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(Backbone<float>(c, 0), ConfigError);
  c = small_config();
  c.embedding_dim = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.blocks_per_stage = {1};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("input shape mismatch is a dimension error") {
  Backbone<float> net(small_config(), 0);
  auto tape = Tape<float>::inference();
  CHECK_THROWS_AS(net.forward(tape, Tensor<float>(Shape{1, 3, 15, 16}), false), DimensionError);
  CHECK_THROWS_AS(net.forward(tape, Tensor<float>(Shape{1, 1, 16, 16}), false), DimensionError);
}

TEST_CASE("initialization is deterministic in the seed") {
  Backbone<float> a(small_config(), 42), b(small_config(), 42), c(small_config(), 43);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  REQUIRE(pa.size() == pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(bit_equal(pa[i].second.values(), pb[i].second.values()));
    if (pa[i].second.values() != pc[i].second.values()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("fan-in uniform bound and batchnorm init") {
  Backbone<double> net(small_config(), 5);
  for (const auto& [name, t] : net.parameters()) {
    if (name.ends_with(".kernel") || name.ends_with(".weight")) {
      const auto& s = t.shape();
      const std::int64_t fan_in = t.numel() / s[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      double max_abs = 0;
      for (double v : t.values()) max_abs = std::max(max_abs, std::abs(v));
      CHECK(max_abs <= bound);
      if (t.numel() > 200) CHECK(max_abs > 0.9 * bound);
    }
    if (name.ends_with(".gain")) {
      for (double v : t.values()) CHECK(v == 1.0);
    }
    if (name.find("bn") != std::string::npos && name.ends_with(".bias")) {
      for (double v : t.values()) CHECK(v == 0.0);
    }
  }
  // 1 input channel, 3x3 kernel: fan-in 9, bound 1/3.
  Rng rng(1);
  Conv2d<double> conv(1, 64, 3, {}, rng);
  double max_abs = 0;
  for (double v : conv.kernel.values()) max_abs = std::max(max_abs, std::abs(v));
  CHECK(max_abs <= 1.0 / 3.0);
  CHECK(max_abs > 0.3);
}

TEST_CASE("identical images give identical embedding rows in eval mode") {
  Backbone<float> net(small_config(), 7);
  Rng rng(3);
  auto one = random_tensor<float>(Shape{1, 3, 16, 16}, rng);
  Tensor<float> two(Shape{2, 3, 16, 16});
  for (std::size_t i = 0; i < one.values().size(); ++i) {
    two.data()[i] = one.data()[i];
    two.data()[i + one.values().size()] = one.data()[i];
  }
  auto tape = Tape<float>::inference();
  auto e = net.forward(tape, two, false).embedding.values;
  const std::size_t d = static_cast<std::size_t>(e.dim(1));
  std::vector<float> r0(e.values().begin(), e.values().begin() + static_cast<std::ptrdiff_t>(d));
  std::vector<float> r1(e.values().begin() + static_cast<std::ptrdiff_t>(d), e.values().end());
  CHECK(bit_equal(r0, r1));
}

TEST_CASE("zeroed residual block with identity shortcut is the identity in eval mode") {
  Rng rng(11);
  ResidualBlock<double> block(5, 5, 1, rng);
  REQUIRE_FALSE(block.projection);
  for (auto* k : {&block.conv1.kernel, &block.conv2.kernel}) {
    for (auto& v : k->data()) v = 0.0;
  }
  for (auto* bn : {&block.bn_in, &block.bn1, &block.bn2}) {
    for (auto& v : bn->bias.data()) v = 0.0;
  }
  auto x = random_tensor(Shape{2, 5, 6, 6}, rng);
  auto tape = Tape<double>::inference();
  auto y = block.forward(tape, x, false);
  CHECK(bit_equal(y.values(), x.values()));
}

TEST_CASE("flatten is channel-major row-major") {
  BackboneConfig c = small_config();
  Backbone<double> net(c, 1);
  Rng rng(4);
  auto x = random_tensor(Shape{2, 3, 16, 16}, rng);
  auto tape = Tape<double>::inference();
  auto out = net.forward(tape, x, false);
  const auto& fm = out.feature_map.values;
  auto params = net.embedding_parameters();
  const auto& w = params[0].second;
  const auto& b = params[1].second;
  const std::int64_t flat = c.flatten_dim();
  for (std::int64_t r = 0; r < 2; ++r) {
    for (std::int64_t o = 0; o < c.embedding_dim; ++o) {
      double acc = b.data()[static_cast<std::size_t>(o)];
      for (std::int64_t d = 0; d < fm.dim(1); ++d) {
        for (std::int64_t yy = 0; yy < fm.dim(2); ++yy) {
          for (std::int64_t xx = 0; xx < fm.dim(3); ++xx) {
            const std::int64_t idx = (d * fm.dim(2) + yy) * fm.dim(3) + xx;
            acc += w.data()[static_cast<std::size_t>(o * flat + idx)] * fm.data()[static_cast<std::size_t>(r * flat + idx)];
          }
        }
      }
      CHECK(out.embedding.values.data()[static_cast<std::size_t>(r * c.embedding_dim + o)] == doctest::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("gradients reaching O_f directly never touch L_1") {
  Backbone<double> net(small_config(), 2);
  Rng rng(8);
  auto x = random_tensor(Shape{2, 3, 16, 16}, rng);
  Tape<double> tape;
  auto out = net.forward(tape, x, true);
  auto loss = ops::sum_all(tape, ops::mul(tape, out.feature_map.values, out.feature_map.values));
  tape.backward(loss);
  for (const auto& [name, t] : net.embedding_parameters()) {
    CHECK_MESSAGE(!t.has_grad(), name);
  }
  bool final_conv_has_grad = false;
  for (double g : net.final_conv_kernel().grad()) final_conv_has_grad |= g != 0.0;
  CHECK(final_conv_has_grad);
}

TEST_CASE("backbone gradient matches finite differences") {
  BackboneConfig c;
  c.input_channels = 2;
  c.input_height = c.input_width = 6;
  c.stage_channels = {3};
  c.blocks_per_stage = {1};
  c.embedding_dim = 3;
  Backbone<double> net(c, 13);
  Rng rng(21);
  auto x = random_tensor(Shape{3, 2, 6, 6}, rng);
  auto w = random_tensor(Shape{3, 3}, rng);
  auto params = net.parameters();
  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, t] : params) {
    if (name.find("block0.conv") != std::string::npos || name.find("embed") != std::string::npos) inputs.push_back(t);
  }
  auto r = grad_check(
      [&](Tape<double>& t) {
        auto e = net.forward(t, x, true).embedding.values;
        return ops::sum_all(t, ops::mul(t, e, w));
      },
      inputs);
  CHECK(r.max_rel_error < 1e-4);
}
