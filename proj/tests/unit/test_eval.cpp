#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tml/eval.hpp"

using namespace tml;
using namespace tml::eval;

namespace {

EmbeddingSet gaussian_clusters(int classes, int per_class, int dim, double spread, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingSet e;
  e.dim = dim;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> centre(static_cast<std::size_t>(dim));
    for (auto& v : centre) v = rng.normal();
    for (int i = 0; i < per_class; ++i) {
      for (int j = 0; j < dim; ++j) e.matrix.push_back(centre[static_cast<std::size_t>(j)] + spread * rng.normal());
      e.labels.push_back(c);
      ++e.rows;
    }
  }
  return e;
}

// Random orthogonal matrix from Gram-Schmidt on Gaussian columns.
std::vector<double> random_rotation(int d, Rng& rng) {
  std::vector<double> q(static_cast<std::size_t>(d * d));
  for (auto& v : q) v = rng.normal();
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < i; ++k) {
      double dot = 0;
      for (int j = 0; j < d; ++j) dot += q[static_cast<std::size_t>(i * d + j)] * q[static_cast<std::size_t>(k * d + j)];
      for (int j = 0; j < d; ++j) q[static_cast<std::size_t>(i * d + j)] -= dot * q[static_cast<std::size_t>(k * d + j)];
    }
    double n = 0;
    for (int j = 0; j < d; ++j) n += q[static_cast<std::size_t>(i * d + j)] * q[static_cast<std::size_t>(i * d + j)];
    for (int j = 0; j < d; ++j) q[static_cast<std::size_t>(i * d + j)] /= std::sqrt(n);
  }
  return q;
}

// Brute-force oracle: accuracy of the best threshold over a fine grid.
double brute_best_accuracy(const std::vector<double>& s, const std::vector<bool>& same) {
  double best = 0;
  for (double t = -1.5; t <= 1.5; t += 1e-3) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < s.size(); ++i) ok += (s[i] > t) == same[i];
    best = std::max(best, static_cast<double>(ok) / static_cast<double>(s.size()));
  }
  return best;
}

}  // namespace

TEST_CASE("four-pair two-fold example") {
  std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  std::vector<bool> same{true, true, false, false};
  auto r = verification_accuracy(s, same, 2);
  CHECK(r.accuracy == 1.0);
  CHECK(r.best_threshold > 0.2);
  CHECK(r.best_threshold < 0.8);
  CHECK(r.fold_accuracy.size() == 2);
}

TEST_CASE("perfect separation") {
  Rng rng(1);
  std::vector<double> s;
  std::vector<bool> same;
  for (int i = 0; i < 400; ++i) {
    const bool pos = i % 3 == 0;
    s.push_back(pos ? rng.uniform(0.5, 1.0) : rng.uniform(-1.0, 0.4));
    same.push_back(pos);
  }
  auto r = verification_accuracy(s, same, 10, {1e-4, 1e-3, 1e-2, 0.1});
  CHECK(r.accuracy == 1.0);
  for (const auto& t : r.tar_at_far) CHECK(t.tar == 1.0);
}

TEST_CASE("shuffled labels give chance accuracy") {
  // One trial of 1000 pairs has a spread of about 0.025, so average 40 trials.
  // Held-out accuracy on noise sits slightly below 0.5.
  double sum = 0;
  const int trials = 40;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(static_cast<std::uint64_t>(100 + trial));
    std::vector<double> s;
    std::vector<int> labels(1000);
    for (int i = 0; i < 1000; ++i) {
      s.push_back(rng.uniform(-1.0, 1.0));
      labels[static_cast<std::size_t>(i)] = i < 500;
    }
    rng.shuffle(labels.begin(), labels.end());
    std::vector<bool> same(labels.begin(), labels.end());
    auto r = verification_accuracy(s, same, 10);
    CHECK(std::abs(r.accuracy - 0.5) <= 0.1);
    sum += r.accuracy;
  }
  CHECK(std::abs(sum / trials - 0.5) <= 0.03);
}

TEST_CASE("best threshold agrees with a brute-force sweep") {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> s;
    std::vector<bool> same;
    for (int i = 0; i < 200; ++i) {
      const bool pos = rng.bernoulli(0.5);
      s.push_back(std::round((pos ? rng.normal() * 0.3 + 0.3 : rng.normal() * 0.3 - 0.1) * 1e3) / 1e3);
      same.push_back(pos);
    }
    std::size_t ok = 0;
    auto r = verification_accuracy(s, same, 10);
    for (std::size_t i = 0; i < s.size(); ++i) ok += (s[i] > r.best_threshold) == same[i];
    CHECK(static_cast<double>(ok) / 200.0 == doctest::Approx(brute_best_accuracy(s, same)));
  }
}

TEST_CASE("verification is invariant under increasing transforms") {
  Rng rng(4);
  std::vector<double> s, t;
  std::vector<bool> same;
  for (int i = 0; i < 300; ++i) {
    const bool pos = rng.bernoulli(0.5);
    s.push_back(pos ? rng.normal() * 0.3 + 0.2 : rng.normal() * 0.3 - 0.2);
    same.push_back(pos);
    t.push_back(std::exp(3.0 * s.back()) - 7.0);
  }
  auto a = verification_accuracy(s, same, 10, {1e-2, 0.1});
  auto b = verification_accuracy(t, same, 10, {1e-2, 0.1});
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.fold_accuracy == b.fold_accuracy);
  REQUIRE(a.roc.size() == b.roc.size());
  for (std::size_t i = 0; i < a.roc.size(); ++i) {
    CHECK(a.roc[i].far == b.roc[i].far);
    CHECK(a.roc[i].tar == b.roc[i].tar);
  }
  for (std::size_t i = 1; i < a.roc.size(); ++i) {
    CHECK(a.roc[i].far >= a.roc[i - 1].far);
    CHECK(a.roc[i].tar >= a.roc[i - 1].tar);
  }
  CHECK(a.roc.front().far == 0.0);
  CHECK(a.roc.back().far == 1.0);
  CHECK(a.roc.back().tar == 1.0);
}

TEST_CASE("roc ties and interpolation") {
  std::vector<double> s{0.9, 0.5, 0.5, 0.1};
  std::vector<bool> same{true, true, false, false};
  auto roc = roc_curve(s, same);
  REQUIRE(roc.size() == 4);  // origin + 3 distinct scores
  CHECK(roc[1].far == 0.0);
  CHECK(roc[1].tar == 0.5);
  CHECK(roc[2].far == 0.5);
  CHECK(roc[2].tar == 1.0);
  CHECK(tar_at_far(roc, 0.25) == doctest::Approx(0.75));
  CHECK(tar_at_far(roc, 0.0) == 0.5);
  CHECK(tar_at_far(roc, 1.0) == 1.0);
}

TEST_CASE("verification protocol errors") {
  std::vector<double> s{0.1, 0.2, 0.3};
  CHECK_THROWS_AS(verification_accuracy(s, {true, true, true}, 2), ProtocolError);
  CHECK_THROWS_AS(verification_accuracy(s, {true, false, true}, 2), ProtocolError);
  CHECK_THROWS_AS(verification_accuracy(s, {true, false}, 2), DimensionError);
}

TEST_CASE("pair-based verification uses cosine similarity") {
  EmbeddingSet e;
  e.rows = 4;
  e.dim = 2;
  e.matrix = {1, 0, 2, 0.1, 0, 1, 0.1, 3};
  e.labels = {0, 0, 1, 1};
  data::PairList pairs{{0, 1, true}, {2, 3, true}, {0, 2, false}, {1, 3, false}};
  auto r = verification_accuracy(pairs, e, 2);
  CHECK(r.accuracy == 1.0);
  CHECK(cosine_similarity(e.row(0), e.row(2)) == 0.0);
  CHECK(cosine_similarity(e.row(0), std::vector<double>{5, 0}) == doctest::Approx(1.0));
}

TEST_CASE("variance report hand examples") {
  EmbeddingSet same;
  same.rows = 4;
  same.dim = 2;
  same.matrix = {1, 1, 1, 1, 1, 1, 1, 1};
  same.labels = {0, 0, 1, 1};
  auto r = variance_report(same);
  CHECK(r.intra == 0.0);
  CHECK(r.inter == 0.0);
  CHECK(r.state == RatioState::undefined);
  CHECK(ratio_text(r) == "undefined");

  EmbeddingSet poles;
  poles.rows = 4;
  poles.dim = 3;
  poles.matrix = {1, 0, 0, 1, 0, 0, -1, 0, 0, -1, 0, 0};
  poles.labels = {0, 0, 1, 1};
  r = variance_report(poles);
  CHECK(r.intra == 0.0);
  CHECK(r.inter == 1.0);
  CHECK(r.state == RatioState::infinite);

  EmbeddingSet spread;
  spread.rows = 5;
  spread.dim = 1;
  spread.matrix = {0, 2, 10, 14, 7};
  spread.labels = {0, 0, 1, 1, 2};  // class 2 is a singleton
  r = variance_report(spread);
  CHECK(r.excluded_classes == std::vector<int>{2});
  CHECK(r.intra == doctest::Approx((1.0 + 4.0) / 2));    // per-class mean sq deviation 1 and 4
  CHECK(r.inter == doctest::Approx(5.5 * 5.5));  // centroids 1 and 12 around 6.5
  CHECK(r.ratio == doctest::Approx(r.inter / r.intra));

  EmbeddingSet singletons;
  singletons.rows = 2;
  singletons.dim = 1;
  singletons.matrix = {0, 1};
  singletons.labels = {0, 1};
  CHECK_THROWS_AS(variance_report(singletons), ProtocolError);
}

TEST_CASE("variance report is rotation invariant and scales quadratically") {
  auto e = gaussian_clusters(5, 8, 6, 0.4, 11);
  auto base = variance_report(e);
  Rng rng(12);
  const auto q = random_rotation(6, rng);
  EmbeddingSet rotated = e;
  for (std::int64_t i = 0; i < e.rows; ++i) {
    for (int a = 0; a < 6; ++a) {
      double v = 0;
      for (int b = 0; b < 6; ++b) v += q[static_cast<std::size_t>(a * 6 + b)] * e.row(i)[static_cast<std::size_t>(b)];
      rotated.matrix[static_cast<std::size_t>(i * 6 + a)] = v;
    }
  }
  auto rot = variance_report(rotated);
  CHECK(std::abs(rot.intra - base.intra) <= 1e-6);
  CHECK(std::abs(rot.inter - base.inter) <= 1e-6);
  CHECK(std::abs(rot.ratio - base.ratio) <= 1e-6);

  for (double c : {0.1, 3.0}) {
    EmbeddingSet scaled = e;
    for (auto& v : scaled.matrix) v *= c;
    auto s = variance_report(scaled);
    CHECK(std::abs(s.intra - c * c * base.intra) <= 1e-6 * std::max(1.0, c * c * base.intra));
    CHECK(std::abs(s.inter - c * c * base.inter) <= 1e-6 * std::max(1.0, c * c * base.inter));
    CHECK(std::abs(s.ratio - base.ratio) <= 1e-6);
  }
}

TEST_CASE("variance table matches the golden rendering") {
  VarianceReport r;
  r.intra = 5.39;
  r.inter = 5.07;
  r.ratio = 0.94;
  std::ifstream in(TML_FIXTURE_DIR "/variance_table.txt");
  std::stringstream golden;
  golden << in.rdbuf();
  REQUIRE_FALSE(golden.str().empty());
  CHECK(render_variance_table({{"Standard ArcFace Loss", r}}) == golden.str());
  CHECK(variance_csv({{"arcface", r}}) == "method,intra,inter,ratio\narcface,5.39,5.07,0.94\n");
}

TEST_CASE("l2 normalization of embedding sets") {
  auto e = l2_normalized(gaussian_clusters(3, 4, 5, 1.0, 2));
  CHECK(e.normalized);
  CHECK_NOTHROW(e.validate());
  e.matrix[0] += 0.1;
  CHECK_THROWS_AS(e.validate(), NumericalError);
}
