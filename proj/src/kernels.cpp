#include "cerl/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace cerl::kernels {

#if defined(CERL_HAVE_AVX2)
// Defined in kernels_avx2.cpp.
const KernelTable& avx2_table();
#endif

namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double sqdist_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void mul_add_scalar(const double* a, const double* b, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

const KernelTable kScalar{"scalar", dot_scalar, axpy_scalar, sqdist_scalar, mul_add_scalar};

const KernelTable& select_default() {
  if (const char* env = std::getenv("CERL_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return kScalar;
  }
  if (const KernelTable* t = avx2()) return *t;
  return kScalar;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> s{&select_default()};
  return s;
}

}  // namespace

const KernelTable& scalar() { return kScalar; }

const KernelTable* avx2() {
#if defined(CERL_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  if (supported) return &avx2_table();
#endif
  return nullptr;
}

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) { slot().store(&table, std::memory_order_relaxed); }

}  // namespace cerl::kernels
