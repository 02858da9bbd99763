#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "tml/eval.hpp"

namespace tml::eval {

void EmbeddingSet::validate() const {
  if (matrix.size() != static_cast<std::size_t>(rows * dim) || labels.size() != static_cast<std::size_t>(rows)) {
    throw DimensionError("embedding set: matrix, row count and labels disagree");
  }
  if (!normalized) return;
  for (std::int64_t i = 0; i < rows; ++i) {
    double ss = 0;
    for (double v : row(i)) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-6) throw NumericalError("embedding set: row " + std::to_string(i) + " is not unit norm");
  }
}

EmbeddingSet l2_normalized(EmbeddingSet set) {
  for (std::int64_t i = 0; i < set.rows; ++i) {
    double ss = 0;
    for (double v : set.row(i)) ss += v * v;
    const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
    for (std::int64_t j = 0; j < set.dim; ++j) set.matrix[static_cast<std::size_t>(i * set.dim + j)] *= inv;
  }
  set.normalized = true;
  return set;
}

EmbeddingSet embed_dataset(Backbone<float>& backbone, const data::LabeledDataset& ds, std::int64_t batch_size) {
  EmbeddingSet out;
  out.rows = static_cast<std::int64_t>(ds.size());
  out.dim = backbone.config().embedding_dim;
  out.labels = ds.labels;
  out.matrix.reserve(static_cast<std::size_t>(out.rows * out.dim));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
    auto tape = Tape<float>::inference();
    auto emb = backbone.forward(tape, data::make_batch(ds, idx), false).embedding.values;
    for (float v : emb.values()) out.matrix.push_back(static_cast<double>(v));
  }
  return l2_normalized(std::move(out));
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::max(std::sqrt(aa) * std::sqrt(bb), 1e-12);
}

namespace {

// Candidate thresholds: below the minimum, midpoints between distinct sorted
// scores, above the maximum.
std::vector<double> candidate_thresholds(std::vector<double> s) {
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> t;
  t.reserve(s.size() + 1);
  t.push_back(s.front() - 1.0);
  for (std::size_t i = 0; i + 1 < s.size(); ++i) t.push_back(0.5 * (s[i] + s[i + 1]));
  t.push_back(s.back() + 1.0);
  return t;
}

double accuracy_at(std::span<const double> scores, const std::vector<bool>& same, const std::vector<std::size_t>& idx,
                   double threshold) {
  std::size_t correct = 0;
  for (std::size_t i : idx) correct += (scores[i] > threshold) == same[i];
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

double best_threshold(std::span<const double> scores, const std::vector<bool>& same, const std::vector<std::size_t>& idx) {
  std::vector<double> s;
  for (std::size_t i : idx) s.push_back(scores[i]);
  double best_t = 0, best_acc = -1;
  for (double t : candidate_thresholds(std::move(s))) {
    const double acc = accuracy_at(scores, same, idx, t);
    if (acc > best_acc) {
      best_acc = acc;
      best_t = t;
    }
  }
  return best_t;
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& same) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double P = static_cast<double>(std::count(same.begin(), same.end(), true));
  const double N = static_cast<double>(same.size()) - P;
  std::vector<RocPoint> roc{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (same[order[k]] ? tp : fp) += 1;
      ++k;
    }
    roc.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P});
  }
  return roc;
}

double tar_at_far(const std::vector<RocPoint>& roc, double far) {
  // Last point with FAR <= far carries the highest TAR at that FAR.
  std::size_t i = 0;
  while (i + 1 < roc.size() && roc[i + 1].far <= far) ++i;
  if (i + 1 >= roc.size()) return roc[i].tar;
  const auto& a = roc[i];
  const auto& b = roc[i + 1];
  const double w = (far - a.far) / (b.far - a.far);
  return a.tar + w * (b.tar - a.tar);
}

VerificationReport verification_accuracy(std::span<const double> scores, const std::vector<bool>& same, int folds,
                                         const std::vector<double>& far_levels) {
  if (scores.size() != same.size()) throw DimensionError("verification: score and label counts differ");
  if (folds < 2) throw ConfigError("verification: need at least 2 folds");
  VerificationReport r;
  r.positives = static_cast<std::size_t>(std::count(same.begin(), same.end(), true));
  r.negatives = same.size() - r.positives;
  if (r.positives == 0 || r.negatives == 0) {
    throw ProtocolError("verification: pair list holds only " + std::string(r.positives ? "positive" : "negative") +
                        " pairs");
  }
  if (r.positives < static_cast<std::size_t>(folds) || r.negatives < static_cast<std::size_t>(folds)) {
    throw ProtocolError("verification: " + std::to_string(folds) + " folds need at least as many positive and negative pairs (have " +
                        std::to_string(r.positives) + " and " + std::to_string(r.negatives) + ")");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericalError("verification: non-finite similarity score");
  }
  const auto k = static_cast<std::size_t>(folds);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < scores.size(); ++i) (i % k == f ? test : train).push_back(i);
    r.fold_accuracy.push_back(accuracy_at(scores, same, test, best_threshold(scores, same, train)));
  }
  const double mean = std::accumulate(r.fold_accuracy.begin(), r.fold_accuracy.end(), 0.0) / static_cast<double>(k);
  double var = 0;
  for (double a : r.fold_accuracy) var += (a - mean) * (a - mean);
  r.accuracy = mean;
  r.accuracy_std = std::sqrt(var / static_cast<double>(k));
  std::vector<std::size_t> all(scores.size());
  std::iota(all.begin(), all.end(), 0);
  r.best_threshold = best_threshold(scores, same, all);
  r.roc = roc_curve(scores, same);
  for (double far : far_levels) r.tar_at_far.push_back({far, tar_at_far(r.roc, far)});
  return r;
}

VerificationReport verification_accuracy(const data::PairList& pairs, const EmbeddingSet& embeddings, int folds,
                                         const std::vector<double>& far_levels) {
  std::vector<double> scores;
  std::vector<bool> same;
  for (const auto& p : pairs) {
    if (static_cast<std::int64_t>(std::max(p.a, p.b)) >= embeddings.rows) {
      throw IndexError("verification: pair references sample beyond the embedding set");
    }
    scores.push_back(cosine_similarity(embeddings.row(static_cast<std::int64_t>(p.a)), embeddings.row(static_cast<std::int64_t>(p.b))));
    same.push_back(p.same);
  }
  return verification_accuracy(scores, same, folds, far_levels);
}

VarianceReport variance_report(const EmbeddingSet& e) {
  std::map<int, std::vector<std::int64_t>> by_class;
  for (std::int64_t i = 0; i < e.rows; ++i) by_class[e.labels[static_cast<std::size_t>(i)]].push_back(i);
  VarianceReport r;
  std::vector<std::vector<double>> centroids;
  double intra_sum = 0;
  for (const auto& [label, members] : by_class) {
    if (members.size() < 2) {
      r.excluded_classes.push_back(label);
      continue;
    }
    std::vector<double> c(static_cast<std::size_t>(e.dim), 0.0);
    for (auto i : members) {
      const auto v = e.row(i);
      for (std::size_t j = 0; j < c.size(); ++j) c[j] += v[j];
    }
    for (double& v : c) v /= static_cast<double>(members.size());
    double ss = 0;
    for (auto i : members) {
      const auto v = e.row(i);
      for (std::size_t j = 0; j < c.size(); ++j) ss += (v[j] - c[j]) * (v[j] - c[j]);
    }
    intra_sum += ss / static_cast<double>(members.size());
    centroids.push_back(std::move(c));
  }
  if (centroids.size() < 2) {
    throw ProtocolError("variance report: need at least 2 classes with 2 or more samples, have " +
                        std::to_string(centroids.size()));
  }
  const double K = static_cast<double>(centroids.size());
  r.intra = intra_sum / K;
  std::vector<double> global(static_cast<std::size_t>(e.dim), 0.0);
  for (const auto& c : centroids) {
    for (std::size_t j = 0; j < c.size(); ++j) global[j] += c[j] / K;
  }
  double inter = 0;
  for (const auto& c : centroids) {
    for (std::size_t j = 0; j < c.size(); ++j) inter += (c[j] - global[j]) * (c[j] - global[j]);
  }
  r.inter = inter / K;
  if (r.intra > 0.0) {
    r.ratio = r.inter / r.intra;
  } else {
    r.state = r.inter > 0.0 ? RatioState::infinite : RatioState::undefined;
    r.ratio = r.inter > 0.0 ? INFINITY : NAN;
  }
  return r;
}

std::string ratio_text(const VarianceReport& r) {
  switch (r.state) {
    case RatioState::infinite: return "inf";
    case RatioState::undefined: return "undefined";
    case RatioState::finite: break;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", r.ratio);
  return buf;
}

std::string render_variance_table(const std::vector<std::pair<std::string, VarianceReport>>& rows) {
  const std::vector<std::string> head{"Method", "Intra-class", "Inter-class", "Inter/Intra Ratio"};
  std::vector<std::vector<std::string>> cells{head};
  for (const auto& [name, r] : rows) {
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "%.2f", r.intra);
    std::snprintf(b, sizeof(b), "%.2f", r.inter);
    cells.push_back({name, a, b, ratio_text(r)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& row) {
    out << "|";
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << ' ' << row[c] << std::string(width[c] - row[c].size(), ' ') << " |";
    }
    out << '\n';
  };
  line(cells[0]);
  out << "|";
  for (std::size_t w : width) out << std::string(w + 2, '-') << "|";
  out << '\n';
  for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i]);
  return out.str();
}

std::string variance_csv(const std::vector<std::pair<std::string, VarianceReport>>& rows) {
  std::ostringstream out;
  out << "method,intra,inter,ratio\n";
  char buf[128];
  for (const auto& [name, r] : rows) {
    if (r.state == RatioState::finite) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g", r.intra, r.inter, r.ratio);
    } else {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%s", r.intra, r.inter, ratio_text(r).c_str());
    }
    out << name << ',' << buf << '\n';
  }
  return out.str();
}

std::string verification_csv(const VerificationReport& r) {
  std::ostringstream out;
  char buf[160];
  out << "metric,value\n";
  std::snprintf(buf, sizeof(buf), "accuracy,%.9g\naccuracy_std,%.9g\nbest_threshold,%.9g\npositives,%zu\nnegatives,%zu\n",
                r.accuracy, r.accuracy_std, r.best_threshold, r.positives, r.negatives);
  out << buf;
  for (const auto& t : r.tar_at_far) {
    std::snprintf(buf, sizeof(buf), "tar@far=%g,%.9g\n", t.far, t.tar);
    out << buf;
  }
  return out.str();
}

std::string roc_csv(const VerificationReport& r) {
  std::ostringstream out;
  out << "far,tar\n";
  char buf[64];
  for (const auto& p : r.roc) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", p.far, p.tar);
    out << buf;
  }
  return out.str();
}

}  // namespace tml::eval
