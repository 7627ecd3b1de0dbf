#include <random>
#include <vector>

#include "doctest.h"
#include "fewfed/kernels.hpp"

using namespace fewfed;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Naive triple loops, the reference for every gemm variant.
void naive_gemm_nt(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                   const std::vector<double>& b, std::vector<double>& c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? c[i * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] = s;
    }
}

void naive_gemm_nn(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                   const std::vector<double>& b, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
}

void naive_gemm_tn(std::size_t m, std::size_t n, std::size_t k, const std::vector<double>& a,
                   const std::vector<double>& b, std::vector<double>& c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[p * m + i] * b[p * n + j];
}

void check_close(const std::vector<double>& got, const std::vector<double>& want) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

void check_table(const kernels::KernelTable& t) {
  std::mt19937_64 rng(11);
  // Sizes straddle the 4- and 8-wide vector tails.
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 16u, 31u, 64u}) {
    auto a = random_vector(n, rng);
    auto b = random_vector(n, rng);
    double want = 0.0;
    for (std::size_t i = 0; i < n; ++i) want += a[i] * b[i];
    CHECK(t.dot(a.data(), b.data(), n) == doctest::Approx(want).epsilon(1e-12));

    auto y = random_vector(n, rng);
    auto expected = y;
    for (std::size_t i = 0; i < n; ++i) expected[i] += 0.75 * a[i];
    t.axpy(0.75, a.data(), y.data(), n);
    check_close(y, expected);
  }
  struct Dims {
    std::size_t m, n, k;
  };
  for (auto [m, n, k] : std::vector<Dims>{{1, 1, 1}, {3, 5, 7}, {8, 4, 16}, {13, 9, 6}, {2, 17, 33}}) {
    auto a = random_vector(m * k, rng);
    auto b = random_vector(n * k, rng);
    auto c = random_vector(m * n, rng);
    auto want = c;
    naive_gemm_nt(m, n, k, a, b, want, false);
    t.gemm_nt(m, n, k, a.data(), b.data(), c.data(), false);
    check_close(c, want);
    naive_gemm_nt(m, n, k, a, b, want, true);
    t.gemm_nt(m, n, k, a.data(), b.data(), c.data(), true);
    check_close(c, want);

    auto bn = random_vector(k * n, rng);
    auto c2 = random_vector(m * n, rng);
    auto want2 = c2;
    naive_gemm_nn(m, n, k, a, bn, want2);
    t.gemm_nn(m, n, k, a.data(), bn.data(), c2.data());
    check_close(c2, want2);

    auto at = random_vector(k * m, rng);
    auto c3 = random_vector(m * n, rng);
    auto want3 = c3;
    naive_gemm_tn(m, n, k, at, bn, want3);
    t.gemm_tn(m, n, k, at.data(), bn.data(), c3.data());
    check_close(c3, want3);
  }
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") { check_table(kernels::scalar_table()); }

TEST_CASE("avx2 kernels match naive loops") {
  const kernels::KernelTable* t = kernels::avx2_table();
  if (t == nullptr) {
    MESSAGE("avx2 backend unavailable on this machine");
    return;
  }
  check_table(*t);
}

TEST_CASE("avx2 and scalar agree on every kernel") {
  const kernels::KernelTable* v = kernels::avx2_table();
  if (v == nullptr) return;
  const kernels::KernelTable& s = kernels::scalar_table();
  std::mt19937_64 rng(5);
  const std::size_t m = 11, n = 10, k = 37;
  auto a = random_vector(m * k, rng);
  auto b = random_vector(n * k, rng);
  std::vector<double> cs(m * n), cv(m * n);
  s.gemm_nt(m, n, k, a.data(), b.data(), cs.data(), false);
  v->gemm_nt(m, n, k, a.data(), b.data(), cv.data(), false);
  for (std::size_t i = 0; i < cs.size(); ++i) CHECK(std::abs(cs[i] - cv[i]) <= 1e-12 * (1.0 + std::abs(cs[i])));
}

TEST_CASE("backend selection") {
  const auto& before = kernels::active();
  CHECK(kernels::select(kernels::Backend::scalar));
  CHECK(kernels::active().backend == kernels::Backend::scalar);
  if (kernels::avx2_table() != nullptr) {
    CHECK(kernels::select(kernels::Backend::avx2));
    CHECK(kernels::active().name == "avx2");
  } else {
    CHECK_FALSE(kernels::select(kernels::Backend::avx2));
  }
  kernels::select(before.backend);
}
