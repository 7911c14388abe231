#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "tirtarget/probs.hpp"
#include "tirtarget/rng.hpp"

using tir::Rng;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different stream hashes decorrelate") {
  CHECK(tir::hash_stream(1, 0) != tir::hash_stream(1, 1));
  CHECK(tir::hash_stream(1, 0) != tir::hash_stream(2, 0));
  CHECK(tir::hash_stream(1, 2, 3) != tir::hash_stream(1, 3, 2));
}

TEST_CASE("uniform stays in [0,1) and is roughly flat") {
  Rng rng(7);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("uniform_int covers the full range without bias") {
  Rng rng(11);
  std::array<int, 5> counts{};
  const int n = 50000;
  for (int i = 0; i < n; ++i) counts[rng.uniform_int(5)]++;
  for (int c : counts) CHECK(std::abs(c - n / 5) < 600);
}

TEST_CASE("normal moments") {
  Rng rng(3);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1).scale(0.02));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(5);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  rng.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 100);
}

TEST_CASE("sample_without_replacement returns k sorted distinct indices") {
  Rng rng(9);
  auto idx = rng.sample_without_replacement(50, 20);
  REQUIRE(idx.size() == 20);
  for (size_t i = 1; i < idx.size(); ++i) CHECK(idx[i - 1] < idx[i]);
  for (int v : idx) {
    CHECK(v >= 0);
    CHECK(v < 50);
  }
}

TEST_CASE("clip_and_renormalize enforces the floor exactly") {
  std::vector<double> p = {0.001, 0.009, 0.49, 0.5};
  tir::clip_and_renormalize(p, 0.01);
  double total = 0;
  for (double v : p) {
    CHECK(v >= 0.01);
    total += v;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[0] == 0.01);
  CHECK(p[1] == 0.01);
  // Mass is removed in proportion to the excess above the floor.
  CHECK((0.49 - p[2]) / (0.49 - 0.01) == doctest::Approx((0.5 - p[3]) / (0.5 - 0.01)));
}

TEST_CASE("clip_and_renormalize leaves compliant vectors untouched") {
  std::vector<double> p = {0.2, 0.3, 0.5};
  auto q = p;
  tir::clip_and_renormalize(q, 0.01);
  CHECK(q == p);
}

TEST_CASE("softmax sums to one and orders by logit") {
  std::vector<double> z = {0.0, 1.0, -1.0};
  tir::softmax_inplace(z);
  CHECK(z[0] + z[1] + z[2] == doctest::Approx(1.0));
  CHECK(z[1] > z[0]);
  CHECK(z[0] > z[2]);
}

TEST_CASE("sample_categorical respects point masses") {
  Rng rng(13);
  std::vector<double> p = {0.0, 1.0, 0.0};
  for (int i = 0; i < 100; ++i) CHECK(tir::sample_categorical(rng, p) == 1);
}
