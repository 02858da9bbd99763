#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tml/rng.hpp"
#include "tml/tensor.hpp"

namespace tml::data {

// 8-bit RGB, row-major, channels interleaved (HWC).
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::int64_t h, std::int64_t w) : height(h), width(w), pixels(static_cast<std::size_t>(h * w * 3)) {}
  std::uint8_t& at(std::int64_t y, std::int64_t x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  bool operator==(const Image&) const = default;
};

enum class SplitTag { train, holdout, all };

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  std::vector<std::string> names;        // "<class>/<file>", relative to the dataset root
  std::vector<std::string> class_names;  // index = label
  SplitTag split = SplitTag::all;

  std::size_t size() const { return images.size(); }
  std::int64_t class_count() const { return static_cast<std::int64_t>(class_names.size()); }
  // Throws DataError if labels, names and dimensions are inconsistent.
  void validate() const;
};

// Procedural face-like classes: each class draws a prototype layout (head
// ellipse, eyes, brows, nose, mouth, marks) and each sample perturbs it with
// a small affine warp, brightness jitter and pixel noise. Bit-identical for
// equal arguments.
LabeledDataset synth_generate(int n_classes, int per_class, int image_size, std::uint64_t seed);

struct HoldoutSplit {
  LabeledDataset train;
  LabeledDataset holdout;
};

// Last `fraction` of each class (in dataset order) goes to the holdout; each
// class with >= 2 samples keeps at least one sample on both sides.
HoldoutSplit split_holdout(const LabeledDataset& ds, double fraction = 0.2);

// (v - 127.5) / 128 per channel value.
inline float normalize_value(std::uint8_t v) { return (static_cast<float>(v) - 127.5f) / 128.0f; }

// [3 x H x W] planar float tensor.
Tensor<float> normalize(const Image& image);

Image flip_horizontal(const Image& image);
// Mirrors with probability 0.5 from `rng`.
Image augment_flip(const Image& image, Rng& rng);

// Normalized [B x 3 x H x W] batch of the given sample indices. When
// `flip_rng` is set each image is flipped with probability 0.5 (training
// path only).
Tensor<float> make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices, Rng* flip_rng = nullptr);

struct Pair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
  bool operator==(const Pair&) const = default;
};

using PairList = std::vector<Pair>;

// Seeded sampling without replacement of `n_pos` same-class and `n_neg`
// cross-class pairs; positives first, then negatives.
PairList make_pairs(const LabeledDataset& ds, std::size_t n_pos, std::size_t n_neg, std::uint64_t seed);

// `path_a<TAB>path_b<TAB>0|1` per line, paths relative to the dataset root.
void write_pair_file(const std::filesystem::path& file, const PairList& pairs, const LabeledDataset& ds);
// Resolves names against `ds.names`; unknown names raise DataError.
PairList read_pair_file(const std::filesystem::path& file, const LabeledDataset& ds);

// Lossless PNG export in the `root/<class>/<image>` layout, one PNG per sample.
void export_folder(const LabeledDataset& ds, const std::filesystem::path& root);

void write_png(const std::filesystem::path& file, const Image& image);
Image read_png(const std::filesystem::path& file);

struct LoadReport {
  LabeledDataset dataset;
  std::vector<std::string> skipped;  // non-image files, with reasons
};

// One subdirectory per identity, sorted by name to assign labels; files
// sorted by name within each class. PNG and binary PPM are read; other files
// are skipped and reported. Images are resized (bilinear) to target_size x
// target_size when target_size > 0; otherwise all images must share one size.
LoadReport load_folder(const std::filesystem::path& root, int target_size = 0);

Image resize_bilinear(const Image& image, std::int64_t height, std::int64_t width);

}  // namespace tml::data
