// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

// Data-parallel inner loops shared by the losses, the feature compositing
// path, aggregation and the optimizer. Every kernel has a scalar reference
// implementation and, on x86-64, an AVX2+FMA variant selected at runtime.
// The environment variable FLEG_KERNELS=scalar|avx2 overrides the selection
// (used by the equivalence tests).

namespace fleg::kernels {

enum class Isa { Scalar, Avx2 };

/// ISA picked for this process (cached after first call).
Isa active_isa();
const char* isa_name(Isa isa);

double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n); // y += a*x
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
double abs_diff_sum(const double* a, const double* b, std::size_t n);
double sq_diff_sum(const double* a, const double* b, std::size_t n);

/// One fused optimizer step over a parameter block:
///   m = beta1*m + (1-beta1)*g
///   v = beta2*v + (1-beta2)*g^2
///   p -= lr * (m/bias1) / (sqrt(v/bias2) + eps)
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bias1, double bias2);

// Per-ISA entry points, exposed for the scalar/SIMD equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
double abs_diff_sum(const double* a, const double* b, std::size_t n);
double sq_diff_sum(const double* a, const double* b, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bias1, double bias2);
} // namespace scalar

#if defined(FLEG_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
double sum(const double* x, std::size_t n);
double sumsq(const double* x, std::size_t n);
double abs_diff_sum(const double* a, const double* b, std::size_t n);
double sq_diff_sum(const double* a, const double* b, std::size_t n);
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bias1, double bias2);
} // namespace avx2
#endif

} // namespace fleg::kernels
