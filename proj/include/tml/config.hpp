#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tml/model.hpp"

namespace tml {

enum class CombineMode { weighted, summed_logits, metric_only };

std::string_view to_string(CombineMode mode);
CombineMode parse_combine_mode(std::string_view name);

struct TrainConfig {
  double alpha = 0.4;
  CombineMode combine_mode = CombineMode::weighted;
  double lr0 = 0.1;
  std::vector<int> lr_drop_epochs{10, 18, 22};  // 1-based, effective from the start of the epoch
  double lr_drop_factor = 10.0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::int64_t batch_size = 64;
  int epochs = 20;
  std::uint64_t seed = 0;
  bool deterministic = false;  // also zeroes the wallclock column
  int verify_every = 1;        // epochs between holdout verifications, 0 disables
  int checkpoint_every = 0;    // 0 writes the initial and final checkpoints only
  int verification_pairs = 500;
  bool flip = true;

  void validate() const;
};

struct HeadConfig {
  LossKind loss = LossKind::arcface;
  double scale = 64.0;
  std::optional<double> margin;  // unset selects the default of the loss kind
  bool easy_margin = false;
  double adaface_h = 0.33;
  HeadVariant variant = HeadVariant::linear;

  MarginConfig margin_config() const;
};

struct DataConfig {
  std::string root;
  double holdout_fraction = 0.2;
};

struct RunConfig {
  TrainConfig train;
  BackboneConfig backbone;
  EncoderConfig encoder;
  HeadConfig head;
  DataConfig data;

  ModelConfig model(std::int64_t num_classes) const;
  void validate() const;
};

// JSON with sections "train", "backbone", "encoder", "head" and "data"; keys
// mirror the field names. Missing keys keep their defaults; unknown keys and
// ill-typed values are a ConfigError.
nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace tml
