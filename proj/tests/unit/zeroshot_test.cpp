#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "mizero/error.hpp"
#include "mizero/rng.hpp"
#include "mizero/synth.hpp"
#include "mizero/zeroshot.hpp"

#include "test_util.hpp"

using namespace mizero;

namespace {

/// Independent oracle: full sort per column by (score desc, index asc),
/// average the first min(k, N) in double.
std::vector<double> topk_oracle(const ScoreMatrix& s, std::size_t k) {
  const std::size_t n = s.patch_count();
  const std::size_t kk = std::min(k, n);
  std::vector<double> pooled(s.num_classes());
  for (std::size_t c = 0; c < s.num_classes(); ++c) {
    std::vector<std::pair<float, std::size_t>> column;
    column.reserve(n);
    for (std::size_t i = 0; i < n; ++i) column.emplace_back(s.scores(i, c), i);
    std::sort(column.begin(), column.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double sum = 0.0;
    for (std::size_t i = 0; i < kk; ++i) sum += column[i].first;
    pooled[c] = sum / static_cast<double>(kk);
  }
  return pooled;
}

ZeroShotClassifier axis_classifier(std::size_t c, std::size_t d) {
  ZeroShotClassifier clf;
  clf.weights = MatrixF(c, d);
  for (std::size_t i = 0; i < c; ++i) {
    clf.class_labels.push_back("class" + std::to_string(i));
    clf.weights(i, i) = 1.0f;
  }
  return clf;
}

}  // namespace

TEST_CASE("score_bag on orthonormal rows is the identity pattern") {
  SlideBag bag;
  bag.slide_id = "ortho";
  bag.embeddings = MatrixF(2, 2);
  bag.embeddings(0, 0) = 1.0f;
  bag.embeddings(1, 1) = 1.0f;
  const auto clf = axis_classifier(2, 2);

  const auto s = score_bag(bag, clf);
  CHECK(s.scores(0, 0) == 1.0f);
  CHECK(s.scores(0, 1) == 0.0f);
  CHECK(s.scores(1, 0) == 0.0f);
  CHECK(s.scores(1, 1) == 1.0f);
  CHECK(s.slide_id == "ortho");
}

TEST_CASE("score_bag after load normalization matches hand arithmetic") {
  SlideBag bag;
  bag.slide_id = "hand";
  bag.embeddings = MatrixF(1, 2);
  bag.embeddings(0, 0) = 3.0f;
  bag.embeddings(0, 1) = 4.0f;
  const auto clf = axis_classifier(2, 2);

  const auto s = score_bag(bag.normalized(), clf);
  CHECK(s.scores(0, 0) == doctest::Approx(0.6f));
  CHECK(s.scores(0, 1) == doctest::Approx(0.8f));
}

TEST_CASE("a patch equal to a classifier row scores 1") {
  const auto clf = axis_classifier(3, 3);
  SlideBag bag;
  bag.slide_id = "copy";
  bag.embeddings = MatrixF(1, 3);
  bag.embeddings(0, 2) = 1.0f;
  const auto s = score_bag(bag, clf);
  CHECK(s.scores(0, 2) == 1.0f);
}

TEST_CASE("dimension mismatch is rejected") {
  const auto clf = axis_classifier(2, 3);
  SlideBag bag;
  bag.slide_id = "bad";
  bag.embeddings = MatrixF(1, 2, 1.0f);
  CHECK_THROWS_AS(score_bag(bag, clf), Error);
}

TEST_CASE("cosine scores of unit rows stay within [-1, 1]") {
  SlideBag bag;
  bag.slide_id = "range";
  bag.embeddings = testutil::random_unit_rows(120, 9, 2718);
  ZeroShotClassifier clf;
  clf.weights = testutil::random_unit_rows(4, 9, 281);
  for (int i = 0; i < 4; ++i) clf.class_labels.push_back(std::to_string(i));
  const auto s = score_bag(bag, clf);
  for (float x : s.scores.storage()) {
    CHECK(x >= -1.0f - 1e-5f);
    CHECK(x <= 1.0f + 1e-5f);
  }
}

TEST_CASE("score_bag is independent of the thread count") {
  SlideBag bag;
  bag.slide_id = "threads";
  bag.embeddings = testutil::random_unit_rows(257, 33, 12345);
  ZeroShotClassifier clf;
  clf.weights = testutil::random_unit_rows(4, 33, 999);
  for (int i = 0; i < 4; ++i) clf.class_labels.push_back(std::to_string(i));

  const auto s1 = score_bag(bag, clf, 1);
  const auto s4 = score_bag(bag, clf, 4);
  CHECK(s1.scores == s4.scores);
}

TEST_CASE("mean_pool column means") {
  ScoreMatrix s;
  s.scores = MatrixF(2, 2);
  s.scores(0, 0) = 1.0f;
  s.scores(1, 1) = 1.0f;
  const auto pooled = mean_pool(s);
  CHECK(pooled[0] == doctest::Approx(0.5));
  CHECK(pooled[1] == doctest::Approx(0.5));
}

TEST_CASE("mean_pool of a single row is that row") {
  ScoreMatrix s;
  s.scores = MatrixF(1, 2);
  s.scores(0, 0) = 0.2f;
  s.scores(0, 1) = 0.7f;
  const auto pooled = mean_pool(s);
  CHECK(pooled[0] == doctest::Approx(0.2));
  CHECK(pooled[1] == doctest::Approx(0.7));
}

TEST_CASE("mean_pool hand example") {
  ScoreMatrix s;
  s.scores = MatrixF(3, 2);
  s.scores(0, 0) = 0.9f;
  s.scores(0, 1) = 0.1f;
  s.scores(1, 0) = 0.1f;
  s.scores(1, 1) = 0.5f;
  s.scores(2, 0) = 0.5f;
  s.scores(2, 1) = 0.3f;
  const auto pooled = mean_pool(s);
  // float storage of 0.9, 0.1, ... rounds, hence the 1e-7 band
  CHECK(pooled[0] == doctest::Approx(0.5).epsilon(1e-7));
  CHECK(pooled[1] == doctest::Approx(0.3).epsilon(1e-7));
}

TEST_CASE("topk_pool on a hand column") {
  ScoreMatrix s;
  s.scores = MatrixF(3, 1);
  s.scores(0, 0) = 0.9f;
  s.scores(1, 0) = 0.1f;
  s.scores(2, 0) = 0.5f;
  std::size_t eff = 0;
  const auto pooled = topk_pool(s, 2, &eff);
  CHECK(pooled[0] == doctest::Approx(0.7).epsilon(1e-7));
  CHECK(eff == 2);
}

TEST_CASE("topk_pool with k = 1 is the column max") {
  const auto s = testutil::random_scores(40, 3, 808);
  const auto pooled = topk_pool(s, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    float best = s.scores(0, c);
    for (std::size_t i = 1; i < 40; ++i) best = std::max(best, s.scores(i, c));
    CHECK(pooled[c] == doctest::Approx(static_cast<double>(best)));
  }
}

TEST_CASE("topk_pool clamps k to N and then equals mean_pool") {
  const auto s = testutil::random_scores(25, 4, 4242);
  std::size_t eff = 0;
  const auto top = topk_pool(s, 1000, &eff);
  CHECK(eff == 25);
  const auto mean = mean_pool(s);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(top[c] == doctest::Approx(mean[c]).epsilon(1e-6));
  }
}

TEST_CASE("topk_pool matches the sort oracle on random matrices") {
  SplitMix64 rng(555);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.next_below(120);
    const std::size_t c = 1 + rng.next_below(5);
    const std::size_t k = 1 + rng.next_below(n + 4);
    const auto s = testutil::random_scores(n, c, rng.next());
    const auto fast = topk_pool(s, k);
    const auto oracle = topk_oracle(s, k);
    for (std::size_t m = 0; m < c; ++m) {
      CHECK(fast[m] == oracle[m]);  // bit-exact under the shared sum order
    }
  }
}

TEST_CASE("topk_pool handles duplicated score values") {
  ScoreMatrix s;
  s.scores = MatrixF(5, 1);
  s.scores(0, 0) = 0.5f;
  s.scores(1, 0) = 0.5f;
  s.scores(2, 0) = 0.5f;
  s.scores(3, 0) = 0.1f;
  s.scores(4, 0) = 0.9f;
  const auto pooled = topk_pool(s, 3);
  CHECK(pooled[0] == doctest::Approx((0.9 + 0.5 + 0.5) / 3.0).epsilon(1e-7));
  CHECK(pooled[0] == topk_oracle(s, 3)[0]);
}

TEST_CASE("pooled scores stay inside the column range") {
  SplitMix64 rng(321);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.next_below(60);
    const auto s = testutil::random_scores(n, 3, rng.next());
    const std::size_t k = 1 + rng.next_below(n);
    const auto top = topk_pool(s, k);
    const auto mean = mean_pool(s);
    for (std::size_t c = 0; c < 3; ++c) {
      float lo = s.scores(0, c), hi = s.scores(0, c);
      for (std::size_t i = 1; i < n; ++i) {
        lo = std::min(lo, s.scores(i, c));
        hi = std::max(hi, s.scores(i, c));
      }
      CHECK(top[c] >= static_cast<double>(lo) - 1e-12);
      CHECK(top[c] <= static_cast<double>(hi) + 1e-12);
      CHECK(mean[c] >= static_cast<double>(lo) - 1e-12);
      CHECK(mean[c] <= static_cast<double>(hi) + 1e-12);
    }
  }
}

TEST_CASE("classify_instance picks the best class, lowest index on ties") {
  const auto clf = axis_classifier(2, 2);

  const std::vector<float> toward_second = {0.6f, 0.8f};
  CHECK(classify_instance(toward_second, clf) == 1);

  const std::vector<float> exact_row = {0.0f, 1.0f};
  CHECK(classify_instance(exact_row, clf) == 1);

  const std::vector<float> equidistant = {0.70710678f, 0.70710678f};
  CHECK(classify_instance(equidistant, clf) == 0);  // tie -> lowest index
}

TEST_CASE("classify_slide finds a planted class") {
  // 10 copies of the class-1 direction plus 90 noise patches.
  const std::size_t d = 8;
  ZeroShotClassifier clf;
  clf.weights = random_orthonormal_rows(2, d, 71);
  clf.class_labels = {"c0", "c1"};

  SlideBag bag;
  bag.slide_id = "planted";
  bag.embeddings = MatrixF(100, d);
  SplitMix64 rng(72);
  for (std::size_t i = 0; i < 100; ++i) {
    if (i < 10) {
      std::copy(clf.weights.row(1).begin(), clf.weights.row(1).end(),
                bag.embeddings.row(i).begin());
    } else {
      std::vector<double> v(d);
      for (double& x : v) x = rng.next_gaussian();
      const auto unit = normalize(std::span<const double>(v));
      for (std::size_t j = 0; j < d; ++j) {
        bag.embeddings(i, j) = static_cast<float>(unit[j]);
      }
    }
  }

  PoolConfig cfg;
  cfg.method = PoolMethod::TopK;
  cfg.k = 5;
  const auto pred = classify_slide(bag, clf, cfg);
  CHECK(pred.predicted_class == 1);
  CHECK(pred.effective_k == 5);
  CHECK(pred.pooled_scores.size() == 2);
}

TEST_CASE("permuting bag rows leaves set-based predictions unchanged") {
  SplitMix64 rng(8888);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng.next_below(40);
    const std::size_t d = 2 + rng.next_below(12);
    SlideBag bag;
    bag.slide_id = "perm";
    bag.embeddings = testutil::random_unit_rows(n, d, rng.next());
    ZeroShotClassifier clf;
    clf.weights = testutil::random_unit_rows(3, d, rng.next());
    clf.class_labels = {"a", "b", "c"};

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.next_below(i + 1)]);
    }
    SlideBag shuffled = bag;
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(bag.embeddings.row(perm[i]).begin(),
                bag.embeddings.row(perm[i]).end(),
                shuffled.embeddings.row(i).begin());
    }

    PoolConfig cfg;
    cfg.method = (trial % 2 == 0) ? PoolMethod::TopK : PoolMethod::Mean;
    cfg.k = 1 + rng.next_below(n);
    const auto p1 = classify_slide(bag, clf, cfg);
    const auto p2 = classify_slide(shuffled, clf, cfg);
    CHECK(p1.predicted_class == p2.predicted_class);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(p1.pooled_scores[c] ==
            doctest::Approx(p2.pooled_scores[c]).epsilon(1e-6));
    }
  }
}

TEST_CASE("mean pooling equals topk with k = N through classify_slide") {
  SlideBag bag;
  bag.slide_id = "same";
  bag.embeddings = testutil::random_unit_rows(30, 6, 10101);
  ZeroShotClassifier clf;
  clf.weights = testutil::random_unit_rows(2, 6, 20202);
  clf.class_labels = {"a", "b"};

  PoolConfig mean_cfg;
  mean_cfg.method = PoolMethod::Mean;
  PoolConfig topk_cfg;
  topk_cfg.method = PoolMethod::TopK;
  topk_cfg.k = 30;

  const auto pm = classify_slide(bag, clf, mean_cfg);
  const auto pt = classify_slide(bag, clf, topk_cfg);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(pm.pooled_scores[c] ==
          doctest::Approx(pt.pooled_scores[c]).epsilon(1e-6));
  }
}

TEST_CASE("smoothing without coordinates fails with MissingCoords") {
  SlideBag bag;
  bag.slide_id = "nocoords";
  bag.embeddings = testutil::random_unit_rows(4, 4, 5);
  ZeroShotClassifier clf;
  clf.weights = testutil::random_unit_rows(2, 4, 6);
  clf.class_labels = {"a", "b"};

  PoolConfig cfg;
  cfg.method = PoolMethod::TopK;
  cfg.k = 2;
  cfg.smoothing = 8;
  try {
    classify_slide(bag, clf, cfg);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingCoords);
  }
}

TEST_CASE("score map export writes the documented header") {
  SlideBag bag;
  bag.slide_id = "map";
  bag.embeddings = testutil::random_unit_rows(3, 4, 44);
  auto& coords = bag.coords.emplace();
  coords = {{0, 0}, {1, 0}, {0, 1}};
  ZeroShotClassifier clf;
  clf.weights = testutil::random_unit_rows(2, 4, 45);
  clf.class_labels = {"a", "b"};

  const auto scores = score_bag(bag, clf);
  std::ostringstream out;
  write_score_map(scores, *bag.coords, out);
  const std::string text = out.str();
  CHECK(text.rfind("col,row,score_class0,score_class1\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
}
