#pragma once

// Dense double-precision kernels behind a runtime-selected backend.
//
// Every kernel has a scalar reference implementation. When the build carries
// the AVX2 translation unit and the CPU reports AVX2+FMA, the vector variants
// are used instead. FEWFED_SIMD=scalar in the environment pins the reference
// path. Backends differ only in floating-point rounding; the equivalence tests
// bound that difference.

#include <cstddef>
#include <span>
#include <string_view>

namespace fewfed::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
  Backend backend;
  std::string_view name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, bool accumulate);
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c);
};

const KernelTable& scalar_table() noexcept;
/// nullptr when the binary lacks the AVX2 unit or the CPU cannot run it.
const KernelTable* avx2_table() noexcept;

const KernelTable& active() noexcept;
/// Overrides the selection for the whole process. Returns false when the
/// requested backend is unavailable (selection is then unchanged).
bool select(Backend backend) noexcept;

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c, bool accumulate = false) {
  active().gemm_nt(m, n, k, a, b, c, accumulate);
}

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  active().gemm_nn(m, n, k, a, b, c);
}

inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                    double* c) {
  active().gemm_tn(m, n, k, a, b, c);
}

namespace detail {
const KernelTable& scalar_impl() noexcept;
#ifdef FEWFED_BUILD_AVX2
const KernelTable& avx2_impl() noexcept;
#endif
}  // namespace detail

}  // namespace fewfed::kernels
