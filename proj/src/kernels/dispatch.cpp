#include <atomic>
#include <cstdlib>
#include <string_view>

#include "fewfed/kernels.hpp"

namespace fewfed::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(FEWFED_BUILD_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_selection() noexcept {
  const char* forced = std::getenv("FEWFED_SIMD");
  if (forced != nullptr && std::string_view(forced) == "scalar") return &scalar_table();
  if (const KernelTable* vector = avx2_table()) return vector;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_selection()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return detail::scalar_impl(); }

const KernelTable* avx2_table() noexcept {
#ifdef FEWFED_BUILD_AVX2
  static const bool usable = cpu_has_avx2();
  return usable ? &detail::avx2_impl() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

bool select(Backend backend) noexcept {
  const KernelTable* table = backend == Backend::scalar ? &scalar_table() : avx2_table();
  if (table == nullptr) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

}  // namespace fewfed::kernels
