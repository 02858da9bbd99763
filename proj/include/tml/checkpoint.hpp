#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tml/model.hpp"

namespace tml {

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// A ustar archive holding manifest.json (names, shapes, precision float32,
// byte order little-endian, run config, epoch, tensors_sha256) plus one raw
// float32 array per named tensor under tensors/. Archive members carry a zero
// mtime and fixed ownership, so equal contents give equal bytes.
struct Checkpoint {
  nlohmann::json config;
  int epoch = 0;
  std::vector<CheckpointTensor> tensors;
};

// SHA-256 over every tensor's name, shape and little-endian values, in order.
std::string tensors_sha256(const std::vector<CheckpointTensor>& tensors);

Checkpoint snapshot(const Model<float>& model, const nlohmann::json& config, int epoch);
// Copies the checkpoint into the model. A missing tensor or a shape mismatch
// is an IntegrityError naming the tensor.
void restore(Model<float>& model, const Checkpoint& checkpoint);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// IntegrityError on a malformed archive, a missing member or a hash mismatch.
Checkpoint read_checkpoint(const std::filesystem::path& path);
// The tensors_sha256 recorded in a checkpoint's manifest.
std::string checkpoint_hash(const std::filesystem::path& path);

}  // namespace tml
