#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "tml/data.hpp"
#include "tml/error.hpp"

namespace tml::data {

void LabeledDataset::validate() const {
  if (labels.size() != images.size() || names.size() != images.size()) {
    throw DataError("dataset: images, labels and names differ in count");
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= class_count()) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " of " + names[i] + " is outside [0, " +
                      std::to_string(class_count()) + ")");
    }
    if (images[i].height != images.front().height || images[i].width != images.front().width) {
      throw DataError("dataset: " + names[i] + " differs in size from " + names.front());
    }
  }
}

HoldoutSplit split_holdout(const LabeledDataset& ds, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.class_count()));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  HoldoutSplit out;
  out.train.class_names = out.holdout.class_names = ds.class_names;
  out.train.split = SplitTag::train;
  out.holdout.split = SplitTag::holdout;
  auto take = [&](LabeledDataset& dst, std::size_t i) {
    dst.images.push_back(ds.images[i]);
    dst.labels.push_back(ds.labels[i]);
    dst.names.push_back(ds.names[i]);
  };
  for (const auto& members : by_class) {
    const std::size_t n = members.size();
    std::size_t held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (n >= 2) held = std::clamp<std::size_t>(held, 1, n - 1);
    for (std::size_t k = 0; k < n; ++k) take(k < n - held ? out.train : out.holdout, members[k]);
  }
  return out;
}

Tensor<float> normalize(const Image& image) {
  const std::int64_t H = image.height, W = image.width;
  Tensor<float> t(Shape{3, H, W});
  auto d = t.data();
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      for (int c = 0; c < 3; ++c) d[static_cast<std::size_t>((c * H + y) * W + x)] = normalize_value(image.at(y, x, c));
    }
  }
  return t;
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (std::int64_t y = 0; y < image.height; ++y) {
    for (std::int64_t x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
    }
  }
  return out;
}

Image augment_flip(const Image& image, Rng& rng) { return rng.bernoulli(0.5) ? flip_horizontal(image) : image; }

Tensor<float> make_batch(const LabeledDataset& ds, std::span<const std::size_t> indices, Rng* flip_rng) {
  if (indices.empty()) throw DataError("make_batch: empty index list");
  const auto& first = ds.images.at(indices.front());
  const std::int64_t H = first.height, W = first.width, plane = H * W;
  Tensor<float> batch(Shape{static_cast<std::int64_t>(indices.size()), 3, H, W});
  auto d = batch.data();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Image& img = ds.images.at(indices[b]);
    const bool flip = flip_rng != nullptr && flip_rng->bernoulli(0.5);
    float* dst = d.data() + static_cast<std::ptrdiff_t>(b) * 3 * plane;
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const std::int64_t sx = flip ? W - 1 - x : x;
        for (int c = 0; c < 3; ++c) dst[c * plane + y * W + x] = normalize_value(img.at(y, sx, c));
      }
    }
  }
  return batch;
}

PairList make_pairs(const LabeledDataset& ds, std::size_t n_pos, std::size_t n_neg, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::size_t usable_classes = 0;
  for (const auto& [label, members] : by_class) usable_classes += members.size() >= 2;
  if (by_class.size() < 2 || usable_classes < 1) {
    throw DataError("make_pairs: need samples from at least 2 classes and a class with 2 samples");
  }

  Rng rng = Rng::derive(seed, "pairs");
  PairList out;

  std::vector<Pair> positives;
  for (const auto& [label, members] : by_class) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) positives.push_back({members[i], members[j], true});
    }
  }
  if (n_pos > positives.size()) {
    throw DataError("make_pairs: requested " + std::to_string(n_pos) + " positive pairs but only " +
                    std::to_string(positives.size()) + " exist");
  }
  rng.shuffle(positives.begin(), positives.end());
  out.insert(out.end(), positives.begin(), positives.begin() + static_cast<std::ptrdiff_t>(n_pos));

  const double n = static_cast<double>(ds.size());
  double same_sq = 0;
  for (const auto& [label, members] : by_class) same_sq += static_cast<double>(members.size() * members.size());
  const double total_neg = (n * n - same_sq) / 2.0;
  if (static_cast<double>(n_neg) > total_neg) {
    throw DataError("make_pairs: requested " + std::to_string(n_neg) + " negative pairs but only " +
                    std::to_string(static_cast<std::size_t>(total_neg)) + " exist");
  }
  if (static_cast<double>(n_neg) * 2.0 > total_neg) {
    std::vector<Pair> negatives;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = i + 1; j < ds.size(); ++j) {
        if (ds.labels[i] != ds.labels[j]) negatives.push_back({i, j, false});
      }
    }
    rng.shuffle(negatives.begin(), negatives.end());
    out.insert(out.end(), negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(n_neg));
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (seen.size() < n_neg) {
      std::size_t i = rng.below(ds.size()), j = rng.below(ds.size());
      if (ds.labels[i] == ds.labels[j]) continue;
      if (i > j) std::swap(i, j);
      if (seen.insert({i, j}).second) out.push_back({i, j, false});
    }
  }
  return out;
}

void write_pair_file(const std::filesystem::path& file, const PairList& pairs, const LabeledDataset& ds) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write pair file " + file.string());
  for (const auto& p : pairs) out << ds.names.at(p.a) << '\t' << ds.names.at(p.b) << '\t' << (p.same ? 1 : 0) << '\n';
  if (!out) throw DataError("failed writing pair file " + file.string());
}

PairList read_pair_file(const std::filesystem::path& file, const LabeledDataset& ds) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read pair file " + file.string());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ds.size(); ++i) index.emplace(ds.names[i], i);
  PairList out;
  std::string line;
  std::size_t line_no = 0;
  bool any_pos = false, any_neg = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string a, b, flag;
    if (!std::getline(fields, a, '\t') || !std::getline(fields, b, '\t') || !std::getline(fields, flag) ||
        (flag != "0" && flag != "1")) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": expected path_a<TAB>path_b<TAB>0|1");
    }
    auto ia = index.find(a), ib = index.find(b);
    if (ia == index.end() || ib == index.end()) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": unknown image '" +
                      (ia == index.end() ? a : b) + "'");
    }
    out.push_back({ia->second, ib->second, flag == "1"});
    (flag == "1" ? any_pos : any_neg) = true;
  }
  if (!any_pos || !any_neg) throw DataError("pair file " + file.string() + " needs at least one positive and one negative pair");
  return out;
}

}  // namespace tml::data
