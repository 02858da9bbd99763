#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tml/backbone.hpp"
#include "tml/data.hpp"

namespace tml::eval {

struct EmbeddingSet {
  std::int64_t rows = 0;
  std::int64_t dim = 0;
  std::vector<double> matrix;  // row-major [rows x dim]
  std::vector<int> labels;
  bool normalized = false;

  std::span<const double> row(std::int64_t i) const {
    return {matrix.data() + i * dim, static_cast<std::size_t>(dim)};
  }
  // Row count matches labels; normalized rows have unit norm within 1e-6.
  void validate() const;
};

// Eval-mode backbone embeddings O_eps of every image, l2-normalized, no
// augmentation.
EmbeddingSet embed_dataset(Backbone<float>& backbone, const data::LabeledDataset& ds, std::int64_t batch_size = 64);

EmbeddingSet l2_normalized(EmbeddingSet set);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct RocPoint {
  double far = 0.0;
  double tar = 0.0;
};

struct TarAtFar {
  double far = 0.0;
  double tar = 0.0;
};

struct VerificationReport {
  double accuracy = 0.0;       // mean held-out fold accuracy
  double accuracy_std = 0.0;
  double best_threshold = 0.0; // best threshold over all pairs
  std::vector<double> fold_accuracy;
  std::vector<RocPoint> roc;   // FAR nondecreasing, from (0,0) to (1,1)
  std::vector<TarAtFar> tar_at_far;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline const std::vector<double> kDefaultFarLevels{1e-4};

// k-fold verification over pair scores. Pair i belongs to fold i mod k. On
// each fold the threshold maximizing accuracy on the other k-1 folds (first
// maximum over ascending midpoints between distinct scores) is applied to the
// held-out fold; a pair is predicted "same" when score > threshold.
VerificationReport verification_accuracy(std::span<const double> scores, const std::vector<bool>& same,
                                         int folds = 10, const std::vector<double>& far_levels = kDefaultFarLevels);

// Cosine similarity per pair, then the score-based protocol above.
VerificationReport verification_accuracy(const data::PairList& pairs, const EmbeddingSet& embeddings, int folds = 10,
                                         const std::vector<double>& far_levels = kDefaultFarLevels);

// ROC from sweeping the threshold over all distinct scores (equal scores are
// a single step).
std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& same);
// Linear interpolation between adjacent ROC points.
double tar_at_far(const std::vector<RocPoint>& roc, double far);

enum class RatioState { finite, infinite, undefined };

struct VarianceReport {
  double intra = 0.0;
  double inter = 0.0;
  double ratio = 0.0;  // inter / intra when finite
  RatioState state = RatioState::finite;
  std::vector<int> excluded_classes;  // classes with a single sample
};

// intra: mean over classes of the mean squared distance to the class
// centroid. inter: mean squared distance of class centroids to the mean of
// the centroids. Classes with one sample are excluded (listed in the report);
// fewer than 2 remaining classes is a ProtocolError.
VarianceReport variance_report(const EmbeddingSet& embeddings);

std::string ratio_text(const VarianceReport& r);

// Text table with the columns Method | Intra-class | Inter-class | Inter/Intra Ratio.
std::string render_variance_table(const std::vector<std::pair<std::string, VarianceReport>>& rows);
std::string variance_csv(const std::vector<std::pair<std::string, VarianceReport>>& rows);
std::string verification_csv(const VerificationReport& report);
std::string roc_csv(const VerificationReport& report);

}  // namespace tml::eval
