#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "doctest.h"
#include "fewfed/numeric.hpp"
#include "fewfed/rng.hpp"

using namespace fewfed;

TEST_CASE("derived streams are reproducible and distinct") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
  CHECK(derive_seed(1, {}) != derive_seed(1, {0}));
}

TEST_CASE("uniform_index stays in range and covers it") {
  Rng rng(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const std::size_t x = uniform_index(rng, 7);
    REQUIRE(x < 7);
    ++hits[x];
  }
  // 1000 expected per bucket, sd ~ 29.
  for (int h : hits) CHECK(std::abs(h - 1000) < 150);
  CHECK(uniform_index(rng, 1) == 0);
}

TEST_CASE("uniform_real is in [0, 1)") {
  Rng rng(4);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform_real(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / 10000 == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(9);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  shuffle_in_place<int>(v, rng);
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("sample_without_replacement draws distinct items") {
  Rng rng(10);
  std::vector<int> items{4, 8, 15, 16, 23, 42};
  auto s = sample_without_replacement<int>(items, 4, rng);
  CHECK(s.size() == 4);
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  for (int x : s) CHECK(std::find(items.begin(), items.end(), x) != items.end());
  CHECK(sample_without_replacement<int>(items, 10, rng).size() == 6);
}

TEST_CASE("largest_remainder worked examples") {
  CHECK(largest_remainder(std::vector<double>{0.5, 0.5}, 3) == std::vector<std::size_t>{2, 1});
  CHECK(largest_remainder(std::vector<double>{1, 1, 1}, 10) == std::vector<std::size_t>{4, 3, 3});
  CHECK(largest_remainder(std::vector<double>{0.1, 0.6, 0.3}, 10) == std::vector<std::size_t>{1, 6, 3});
  CHECK(largest_remainder(std::vector<double>{0, 0}, 5) == std::vector<std::size_t>{5, 0});
  CHECK(largest_remainder(std::vector<double>{2, 0, 1}, 0) == std::vector<std::size_t>{0, 0, 0});
}

TEST_CASE("largest_remainder sums exactly and stays within one of the exact share") {
  Rng rng(77);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t k = 1 + uniform_index(rng, 40);
    const std::size_t total = uniform_index(rng, 1000);
    std::vector<double> w(k);
    double sum = 0.0;
    for (double& x : w) sum += (x = uniform_real(rng) < 0.2 ? 0.0 : uniform_real(rng));
    const auto q = largest_remainder(w, total);
    REQUIRE(std::accumulate(q.begin(), q.end(), std::size_t{0}) == total);
    if (sum == 0.0) continue;
    for (std::size_t i = 0; i < k; ++i) {
      const double exact = w[i] / sum * static_cast<double>(total);
      CHECK(static_cast<double>(q[i]) >= std::floor(exact) - 1e-9);
      CHECK(static_cast<double>(q[i]) <= std::floor(exact) + 1.0 + 1e-9);
    }
  }
}

TEST_CASE("softmax is normalized and shift invariant") {
  const std::vector<double> logits{1.0, 2.0, 3.0};
  const auto p = softmax(logits);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p[2] == doctest::Approx(std::exp(3.0) / z));
  const auto shifted = softmax(std::vector<double>{1001.0, 1002.0, 1003.0});
  for (int i = 0; i < 3; ++i) CHECK(shifted[i] == doctest::Approx(p[i]).epsilon(1e-12));
  CHECK(argmax(std::vector<double>{1.0, 5.0, 5.0}) == 1);
}
