#pragma once

// Dense inner-loop kernels used by the network and transport code.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2/FMA variant is compiled into a separate translation unit and chosen at
// startup when the CPU reports both features. Set CERL_SIMD=scalar in the
// environment to force the reference path.

#include <cstddef>
#include <string_view>

namespace cerl::kernels {

using DotFn = double (*)(const double* a, const double* b, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
using SqDistFn = double (*)(const double* a, const double* b, std::size_t n);
using MulAddFn = void (*)(const double* a, const double* b, double* y, std::size_t n);

struct KernelTable {
  std::string_view name;
  DotFn dot;                // sum_i a[i] * b[i]
  AxpyFn axpy;              // y[i] += alpha * x[i]
  SqDistFn squared_distance;  // sum_i (a[i] - b[i])^2
  MulAddFn mul_add;         // y[i] += a[i] * b[i]
};

const KernelTable& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2();

// The table selected for this process.
const KernelTable& active();

// Overrides the process-wide selection; used by tests and benchmarks.
void set_active(const KernelTable& table);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  active().axpy(alpha, x, y, n);
}
inline double squared_distance(const double* a, const double* b, std::size_t n) {
  return active().squared_distance(a, b, n);
}
inline void mul_add(const double* a, const double* b, double* y, std::size_t n) {
  active().mul_add(a, b, y, n);
}

}  // namespace cerl::kernels
