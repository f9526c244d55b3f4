#include <doctest.h>

#include <cmath>

#include "mizero/core.hpp"
#include "mizero/error.hpp"
#include "mizero/rng.hpp"

#include "test_util.hpp"

using namespace mizero;

TEST_CASE("normalize scales to unit length") {
  const std::vector<float> v = {3.0f, 4.0f};
  const auto unit = normalize(std::span<const float>(v));
  CHECK(unit[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(unit[1] == doctest::Approx(0.8).epsilon(1e-6));
}

TEST_CASE("normalize keeps an already unit vector") {
  const std::vector<float> v = {1.0f, 0.0f, 0.0f};
  const auto unit = normalize(std::span<const float>(v));
  CHECK(unit == std::vector<float>{1.0f, 0.0f, 0.0f});
}

TEST_CASE("normalize rejects the zero vector") {
  const std::vector<float> v = {0.0f, 0.0f};
  CHECK_THROWS_WITH_AS(normalize(std::span<const float>(v)),
                       doctest::Contains("norm"), Error);
  try {
    normalize(std::span<const float>(v));
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroVector);
  }
}

TEST_CASE("normalize is scale invariant and idempotent") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d = 1 + rng.next_below(16);
    std::vector<float> v(d);
    for (float& x : v) x = static_cast<float>(rng.next_gaussian());
    if (l2_norm(std::span<const float>(v)) < 1e-6) continue;
    const float alpha =
        static_cast<float>(std::exp(rng.next_double() * 8.0 - 4.0));

    std::vector<float> scaled(d);
    for (std::size_t i = 0; i < d; ++i) scaled[i] = v[i] * alpha;

    const auto a = normalize(std::span<const float>(v));
    const auto b = normalize(std::span<const float>(scaled));
    const auto twice = normalize(std::span<const float>(a));
    for (std::size_t i = 0; i < d; ++i) {
      CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
      CHECK(twice[i] == doctest::Approx(a[i]).epsilon(1e-6));
    }
    CHECK(l2_norm(std::span<const float>(a)) ==
          doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("bag validation catches shape and finiteness breaches") {
  SlideBag bag;
  bag.slide_id = "s";
  bag.embeddings = MatrixF(2, 3, 0.5f);

  SUBCASE("valid") { CHECK_NOTHROW(bag.validate()); }

  SUBCASE("coords must match patch count") {
    bag.coords.emplace().resize(1);
    try {
      bag.validate();
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SizeMismatch);
    }
  }

  SUBCASE("non-finite embedding") {
    bag.embeddings(1, 2) = std::numeric_limits<float>::infinity();
    try {
      bag.validate();
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFinite);
    }
  }
}

TEST_CASE("bag normalization hits every row once") {
  SlideBag bag;
  bag.slide_id = "s";
  bag.embeddings = MatrixF(3, 2);
  bag.embeddings(0, 0) = 3.0f;
  bag.embeddings(0, 1) = 4.0f;
  bag.embeddings(1, 0) = 0.0f;
  bag.embeddings(1, 1) = -2.0f;
  bag.embeddings(2, 0) = 1.0f;
  bag.embeddings(2, 1) = 0.0f;

  const SlideBag unit = bag.normalized();
  CHECK(unit.embeddings(0, 0) == doctest::Approx(0.6f));
  CHECK(unit.embeddings(1, 1) == doctest::Approx(-1.0f));
  CHECK(unit.embeddings(2, 0) == 1.0f);
  // input untouched
  CHECK(bag.embeddings(0, 0) == 3.0f);
}

TEST_CASE("classifier validation") {
  ZeroShotClassifier clf;
  clf.class_labels = {"a", "b"};
  clf.weights = MatrixF(2, 2);
  clf.weights(0, 0) = 1.0f;
  clf.weights(1, 1) = 1.0f;
  CHECK_NOTHROW(clf.validate());

  SUBCASE("duplicate labels") {
    clf.class_labels = {"a", "a"};
    try {
      clf.validate();
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidLabel);
    }
  }

  SUBCASE("non unit row") {
    clf.weights(0, 0) = 0.9f;
    try {
      clf.validate();
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonUnitRow);
    }
  }

  SUBCASE("single class rejected") {
    clf.class_labels = {"a"};
    clf.weights = MatrixF(1, 2);
    clf.weights(0, 0) = 1.0f;
    CHECK_THROWS_AS(clf.validate(), Error);
  }
}

TEST_CASE("splitmix64 streams are deterministic and seed-separated") {
  SplitMix64 a(123), b(123), c(124);
  bool all_equal = true;
  bool any_equal_across = false;
  for (int i = 0; i < 64; ++i) {
    const auto va = a.next();
    all_equal = all_equal && (va == b.next());
    any_equal_across = any_equal_across || (va == c.next());
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_across);
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("gaussian draws have roughly standard moments") {
  SplitMix64 rng(99);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sum2 += g * g;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05).scale(1.0));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.05));
}
