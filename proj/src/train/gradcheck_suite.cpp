#include "tml/gradcheck_suite.hpp"

#include <memory>

#include "tml/model.hpp"
#include "tml/trainer.hpp"

namespace tml {

namespace {

using TD = Tensor<double>;
using TapeD = Tape<double>;

TD random(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    // Keep away from zero so relu/prelu/clamp kinks are not straddled.
    do {
      x = rng.uniform(lo, hi);
    } while (std::abs(x) < 0.05 && lo < 0.0);
  }
  return TD(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights, so every output element has a
// distinct adjoint.
TD weighted(TapeD& t, const TD& y, std::uint64_t seed) {
  return ops::sum_all(t, ops::mul(t, y, random(y.shape(), seed)));
}

GradCheckItem item(std::string name, std::string group, std::function<TD(TapeD&)> f, std::vector<TD> inputs) {
  const double tol = group == "op" ? kOpTolerance : kNormTolerance;
  return {std::move(name), std::move(group), tol, [f = std::move(f), inputs = std::move(inputs)] {
            return grad_check(f, inputs);
          }};
}

std::vector<TD> tensors_of(const NamedTensors<double>& named) {
  std::vector<TD> out;
  for (const auto& [_, t] : named) out.push_back(t);
  return out;
}

// Small model: 8x8 input, two stages, 2x2 final map, one encoder layer.
std::shared_ptr<Model<double>> tiny_model(HeadVariant variant) {
  ModelConfig c;
  c.backbone.input_height = c.backbone.input_width = 8;
  c.backbone.stage_channels = {4, 8};
  c.backbone.blocks_per_stage = {1, 1};
  c.backbone.embedding_dim = 6;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.encoder.feedforward_dim = 12;
  c.margin = MarginConfig::for_kind(LossKind::arcface);
  c.head_variant = variant;
  c.num_classes = 3;
  return std::make_shared<Model<double>>(c, 5);
}

}  // namespace

std::vector<GradCheckItem> gradcheck_suite() {
  std::vector<GradCheckItem> s;
  const TD a = random({3, 4}, 1), b = random({3, 4}, 2), m = random({4, 5}, 3);
  const TD pos = random({3, 4}, 4, 0.5, 2.0);
  const TD chan = random({4}, 5);
  const TD slope = random({4}, 6, 0.1, 0.5);
  const TD x3 = random({2, 3, 4}, 7), y3 = random({2, 4, 3}, 8);
  const TD bias = random({5}, 9);
  const TD lin_w = random({5, 4}, 10);
  const TD img = random({2, 2, 5, 5}, 11), kernel = random({3, 2, 3, 3}, 12);
  const std::vector<int> labels{1, 3, 0};

  s.push_back(item("matmul", "op", [=](TapeD& t) { return weighted(t, ops::matmul(t, a, m), 100); }, {a, m}));
  s.push_back(item("bmm", "op", [=](TapeD& t) { return weighted(t, ops::bmm(t, x3, y3), 101); }, {x3, y3}));
  s.push_back(item("linear", "op", [=](TapeD& t) { return weighted(t, ops::linear(t, a, lin_w, bias), 102); },
                   {a, lin_w, bias}));
  s.push_back(item("conv2d", "op",
                   [=](TapeD& t) { return weighted(t, ops::conv2d(t, img, kernel, ops::Conv2dParams{2, 1}), 103); },
                   {img, kernel}));
  s.push_back(item("add", "op", [=](TapeD& t) { return weighted(t, ops::add(t, a, b), 104); }, {a, b}));
  s.push_back(item("sub", "op", [=](TapeD& t) { return weighted(t, ops::sub(t, a, b), 105); }, {a, b}));
  s.push_back(item("mul", "op", [=](TapeD& t) { return weighted(t, ops::mul(t, a, b), 106); }, {a, b}));
  s.push_back(item("scale", "op", [=](TapeD& t) { return weighted(t, ops::scale(t, a, 1.7), 107); }, {a}));
  s.push_back(item("relu", "op", [=](TapeD& t) { return weighted(t, ops::relu(t, a), 108); }, {a}));
  s.push_back(item("prelu", "op", [=](TapeD& t) { return weighted(t, ops::prelu(t, a, slope, 1), 109); }, {a, slope}));
  s.push_back(item("exp", "op", [=](TapeD& t) { return weighted(t, ops::exp(t, a), 110); }, {a}));
  s.push_back(item("log", "op", [=](TapeD& t) { return weighted(t, ops::log(t, pos), 111); }, {pos}));
  s.push_back(item("sqrt", "op", [=](TapeD& t) { return weighted(t, ops::sqrt(t, pos), 112); }, {pos}));
  s.push_back(item("clamp", "op", [=](TapeD& t) { return weighted(t, ops::clamp(t, a, -0.5, 0.5), 113); }, {a}));
  s.push_back(item("add_channel", "op", [=](TapeD& t) { return weighted(t, ops::add_channel(t, a, chan, 1), 114); },
                   {a, chan}));
  s.push_back(item("mul_channel", "op", [=](TapeD& t) { return weighted(t, ops::mul_channel(t, a, chan, 1), 115); },
                   {a, chan}));
  s.push_back(item("sum", "op", [=](TapeD& t) { return weighted(t, ops::sum(t, x3, 1), 116); }, {x3}));
  s.push_back(item("mean", "op", [=](TapeD& t) { return weighted(t, ops::mean(t, x3, 2), 117); }, {x3}));
  s.push_back(item("max", "op", [=](TapeD& t) { return weighted(t, ops::max(t, x3, 1), 118); }, {x3}));
  s.push_back(item("softmax", "op", [=](TapeD& t) { return weighted(t, ops::softmax(t, x3, -1), 119); }, {x3}));
  s.push_back(item("cross_entropy", "op", [=](TapeD& t) { return ops::cross_entropy(t, a, labels); }, {a}));
  s.push_back(item("l2_normalize", "op", [=](TapeD& t) { return weighted(t, ops::l2_normalize(t, a), 120); }, {a}));
  s.push_back(item("reshape", "op", [=](TapeD& t) { return weighted(t, ops::reshape(t, x3, {4, 6}), 121); }, {x3}));
  s.push_back(item("permute", "op", [=](TapeD& t) { return weighted(t, ops::permute(t, x3, {2, 0, 1}), 122); }, {x3}));
  s.push_back(item("concat", "op",
                   [=](TapeD& t) { return weighted(t, ops::concat(t, std::vector<TD>{a, b}, 1), 123); }, {a, b}));
  s.push_back(item("slice", "op", [=](TapeD& t) { return weighted(t, ops::slice(t, x3, 2, 1, 2), 124); }, {x3}));

  const TD gain = random({4}, 13, 0.5, 1.5), shift = random({4}, 14);
  s.push_back(item("layernorm", "norm",
                   [=](TapeD& t) { return weighted(t, ops::layernorm(t, a, gain, shift), 125); },
                   {a, gain, shift}));
  const TD bn_x = random({3, 2, 3, 3}, 15), bn_g = random({2}, 16, 0.5, 1.5), bn_b = random({2}, 17);
  auto bn_state = std::make_shared<ops::BatchNormState<double>>(
      ops::BatchNormState<double>{TD(Shape{2}, 0.0), TD(Shape{2}, 1.0), 0.1, 1e-5});
  s.push_back(item("batchnorm", "norm",
                   [=](TapeD& t) { return weighted(t, ops::batchnorm(t, bn_x, bn_g, bn_b, *bn_state, true), 126); },
                   {bn_x, bn_g, bn_b}));

  const TD emb = random({3, 5}, 18), cw = random({4, 5}, 19);
  s.push_back(item("cosine_logits", "op",
                   [=](TapeD& t) { return weighted(t, cosine_logits(t, emb, cw), 127); }, {emb, cw}));
  for (auto kind : {LossKind::cosface, LossKind::arcface, LossKind::adaface}) {
    const auto cfg = MarginConfig::for_kind(kind);
    const std::vector<double> scaler{0.3, -0.6, 0.9};
    s.push_back(item("margin_" + std::string(to_string(kind)), "op",
                     [=](TapeD& t) {
                       auto cos = cosine_logits(t, emb, cw);
                       return ops::cross_entropy(
                           t, margin_logits<double>(t, cos, labels, cfg, kind == LossKind::adaface ? scaler : std::vector<double>{}),
                           labels);
                     },
                     {emb, cw}));
  }

  const std::vector<int> batch_labels{0, 2, 1};
  const TD images = random({3, 3, 8, 8}, 20);
  {
    auto model = tiny_model(HeadVariant::linear);
    NamedTensors<double> inputs = model->backbone().parameters();
    model->metric_head().collect(inputs, "metric");
    s.push_back(item("metric_branch", "composite",
                     [=](TapeD& t) {
                       auto out = model->forward(t, images, batch_labels, true, false);
                       return ops::cross_entropy(t, out.metric_logits, batch_labels);
                     },
                     tensors_of(inputs)));
  }
  {
    auto model = tiny_model(HeadVariant::linear);
    NamedTensors<double> inputs;
    for (auto& p : model->backbone().parameters()) {
      if (p.first.rfind("backbone.embed", 0) != 0) inputs.push_back(p);
    }
    for (auto& p : model->transformer().parameters()) inputs.push_back(p);
    s.push_back(item("transformer_branch", "composite",
                     [=](TapeD& t) {
                       auto bb = model->backbone().forward(t, images, true);
                       return ops::cross_entropy(t, model->transformer().logits(t, bb.feature_map, batch_labels, true),
                                                 batch_labels);
                     },
                     tensors_of(inputs)));
  }
  {
    auto model = tiny_model(HeadVariant::metric);
    s.push_back(item("combined_loss", "composite",
                     [=](TapeD& t) {
                       auto out = model->forward(t, images, batch_labels, true, true);
                       return combined_loss(t, out.metric_logits, out.transformer_logits, batch_labels, 0.4).total;
                     },
                     tensors_of(model->parameters())));
    s.push_back(item("summed_logits_loss", "composite",
                     [=](TapeD& t) {
                       auto out = model->forward(t, images, batch_labels, true, true);
                       return summed_logits_loss(t, out.metric_logits, out.transformer_logits, batch_labels);
                     },
                     tensors_of(model->parameters())));
  }
  return s;
}

}  // namespace tml
