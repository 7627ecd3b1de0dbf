#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include "fewfed/kernels.hpp"

namespace fewfed::kernels::detail {
namespace {

inline double horizontal_sum(__m256d v) {
  __m128d low = _mm256_castpd256_pd128(v);
  __m128d high = _mm256_extractf128_pd(v, 1);
  low = _mm_add_pd(low, high);
  __m128d swapped = _mm_unpackhi_pd(low, low);
  return _mm_cvtsd_f64(_mm_add_sd(low, swapped));
}

inline double dot_impl(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double sum = horizontal_sum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

inline void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d scale = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d acc = _mm256_loadu_pd(y + i);
    acc = _mm256_fmadd_pd(scale, _mm256_loadu_pd(x + i), acc);
    _mm256_storeu_pd(y + i, acc);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot(const double* a, const double* b, std::size_t n) { return dot_impl(a, b, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_impl(alpha, x, y, n); }

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a + i * k;
    double* out = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double value = dot_impl(row, b + j * k, k);
      out[j] = accumulate ? out[j] + value : value;
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double scale = a[i * k + p];
      if (scale != 0.0) axpy_impl(scale, b + p * n, c + i * n, n);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* b_row = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double scale = a[p * m + i];
      if (scale != 0.0) axpy_impl(scale, b_row, c + i * n, n);
    }
  }
}

constexpr KernelTable kTable{Backend::avx2, "avx2", dot, axpy, gemm_nt, gemm_nn, gemm_tn};

}  // namespace

const KernelTable& avx2_impl() noexcept { return kTable; }

}  // namespace fewfed::kernels::detail

#endif  // x86-64 guard
