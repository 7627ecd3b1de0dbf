#include "fewfed/kernels.hpp"

namespace fewfed::kernels::detail {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a + i * k;
    double* out = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double value = dot(row, b + j * k, k);
      out[j] = accumulate ? out[j] + value : value;
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double scale = a[i * k + p];
      if (scale != 0.0) axpy(scale, b + p * n, c + i * n, n);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* b_row = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double scale = a[p * m + i];
      if (scale != 0.0) axpy(scale, b_row, c + i * n, n);
    }
  }
}

constexpr KernelTable kTable{Backend::scalar, "scalar", dot, axpy, gemm_nt, gemm_nn, gemm_tn};

}  // namespace

const KernelTable& scalar_impl() noexcept { return kTable; }

}  // namespace fewfed::kernels::detail
