#include "tml/config.hpp"

#include <fstream>
#include <set>

namespace tml {

using nlohmann::json;

std::string_view to_string(CombineMode mode) {
  switch (mode) {
    case CombineMode::weighted:
      return "weighted";
    case CombineMode::summed_logits:
      return "summed_logits";
    case CombineMode::metric_only:
      return "metric_only";
  }
  return "?";
}

CombineMode parse_combine_mode(std::string_view name) {
  for (auto m : {CombineMode::weighted, CombineMode::summed_logits, CombineMode::metric_only}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown combine mode '" + std::string(name) + "' (weighted|summed_logits|metric_only)");
}

void TrainConfig::validate() const {
  if (combine_mode == CombineMode::weighted && !(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha must lie in (0, 1) in weighted mode, got " + std::to_string(alpha));
  }
  for (std::size_t i = 1; i < lr_drop_epochs.size(); ++i) {
    if (lr_drop_epochs[i] <= lr_drop_epochs[i - 1]) throw ConfigError("lr_drop_epochs must be strictly increasing");
  }
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("lr_drop_factor must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch normalization)");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (verify_every < 0 || checkpoint_every < 0) throw ConfigError("verify_every and checkpoint_every must be >= 0");
  if (verification_pairs < 0) throw ConfigError("verification_pairs must be non-negative");
}

MarginConfig HeadConfig::margin_config() const {
  MarginConfig m = MarginConfig::for_kind(loss);
  m.scale = scale;
  if (margin) m.margin = *margin;
  m.easy_margin = easy_margin;
  m.adaface_h = adaface_h;
  return m;
}

ModelConfig RunConfig::model(std::int64_t num_classes) const {
  ModelConfig m;
  m.backbone = backbone;
  m.encoder = encoder;
  m.margin = head.margin_config();
  m.head_variant = head.variant;
  m.num_classes = num_classes;
  return m;
}

void RunConfig::validate() const {
  train.validate();
  model(2).validate();
  if (!(data.holdout_fraction > 0.0 && data.holdout_fraction < 1.0)) {
    throw ConfigError("data.holdout_fraction must lie in (0, 1)");
  }
}

json to_json(const RunConfig& c) {
  json j;
  const auto& t = c.train;
  j["train"] = {{"alpha", t.alpha},
                {"combine_mode", to_string(t.combine_mode)},
                {"lr0", t.lr0},
                {"lr_drop_epochs", t.lr_drop_epochs},
                {"lr_drop_factor", t.lr_drop_factor},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"batch_size", t.batch_size},
                {"epochs", t.epochs},
                {"seed", t.seed},
                {"deterministic", t.deterministic},
                {"verify_every", t.verify_every},
                {"checkpoint_every", t.checkpoint_every},
                {"verification_pairs", t.verification_pairs},
                {"flip", t.flip}};
  const auto& b = c.backbone;
  j["backbone"] = {{"input_channels", b.input_channels}, {"input_height", b.input_height},
                   {"input_width", b.input_width},       {"stage_channels", b.stage_channels},
                   {"blocks_per_stage", b.blocks_per_stage}, {"embedding_dim", b.embedding_dim},
                   {"embedding_batchnorm", b.embedding_batchnorm}};
  const auto& e = c.encoder;
  j["encoder"] = {{"num_layers", e.num_layers},
                  {"num_heads", e.num_heads},
                  {"feedforward_dim", e.feedforward_dim},
                  {"dropout", e.dropout},
                  {"positional_encoding", to_string(e.positional_encoding)}};
  const auto& h = c.head;
  j["head"] = {{"loss", to_string(h.loss)},
               {"scale", h.scale},
               {"margin", h.margin ? json(*h.margin) : json(nullptr)},
               {"easy_margin", h.easy_margin},
               {"adaface_h", h.adaface_h},
               {"variant", to_string(h.variant)}};
  j["data"] = {{"root", c.data.root}, {"holdout_fraction", c.data.holdout_fraction}};
  return j;
}

namespace {

// Reads the keys of one section, rejecting anything unexpected.
class Section {
 public:
  Section(const json& root, const char* name) : name_(name) {
    if (!root.contains(name)) return;
    node_ = &root.at(name);
    if (!node_->is_object()) throw ConfigError(std::string("config section '") + name + "' must be an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (node_ == nullptr || !node_->contains(key)) return;
    try {
      out = node_->at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config ") + name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [key, _] : node_->items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key " + std::string(name_) + "." + key);
    }
  }

 private:
  const char* name_;
  const json* node_ = nullptr;
  std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "train" && key != "backbone" && key != "encoder" && key != "head" && key != "data") {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  RunConfig c;
  {
    Section s(j, "train");
    auto& t = c.train;
    std::string mode(to_string(t.combine_mode));
    s.read("alpha", t.alpha);
    s.read("combine_mode", mode);
    s.read("lr0", t.lr0);
    s.read("lr_drop_epochs", t.lr_drop_epochs);
    s.read("lr_drop_factor", t.lr_drop_factor);
    s.read("momentum", t.momentum);
    s.read("weight_decay", t.weight_decay);
    s.read("batch_size", t.batch_size);
    s.read("epochs", t.epochs);
    s.read("seed", t.seed);
    s.read("deterministic", t.deterministic);
    s.read("verify_every", t.verify_every);
    s.read("checkpoint_every", t.checkpoint_every);
    s.read("verification_pairs", t.verification_pairs);
    s.read("flip", t.flip);
    s.finish();
    t.combine_mode = parse_combine_mode(mode);
  }
  {
    Section s(j, "backbone");
    auto& b = c.backbone;
    s.read("input_channels", b.input_channels);
    s.read("input_height", b.input_height);
    s.read("input_width", b.input_width);
    s.read("stage_channels", b.stage_channels);
    s.read("blocks_per_stage", b.blocks_per_stage);
    s.read("embedding_dim", b.embedding_dim);
    s.read("embedding_batchnorm", b.embedding_batchnorm);
    s.finish();
  }
  {
    Section s(j, "encoder");
    auto& e = c.encoder;
    std::string pe(to_string(e.positional_encoding));
    s.read("num_layers", e.num_layers);
    s.read("num_heads", e.num_heads);
    s.read("feedforward_dim", e.feedforward_dim);
    s.read("dropout", e.dropout);
    s.read("positional_encoding", pe);
    s.finish();
    e.positional_encoding = parse_positional_encoding(pe);
  }
  {
    Section s(j, "head");
    auto& h = c.head;
    std::string loss(to_string(h.loss)), variant(to_string(h.variant));
    json margin = h.margin ? json(*h.margin) : json(nullptr);
    s.read("loss", loss);
    s.read("scale", h.scale);
    s.read("margin", margin);
    s.read("easy_margin", h.easy_margin);
    s.read("adaface_h", h.adaface_h);
    s.read("variant", variant);
    s.finish();
    h.loss = parse_loss_kind(loss);
    h.variant = parse_head_variant(variant);
    if (margin.is_number()) {
      h.margin = margin.get<double>();
    } else if (!margin.is_null()) {
      throw ConfigError("config head.margin must be a number or null");
    }
  }
  {
    Section s(j, "data");
    s.read("root", c.data.root);
    s.read("holdout_fraction", c.data.holdout_fraction);
    s.finish();
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace tml
