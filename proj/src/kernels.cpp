// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

#include "fleg/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace fleg::kernels {

namespace {

Isa detect_isa() {
    if (const char* env = std::getenv("FLEG_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0)
            return Isa::Scalar;
#if defined(FLEG_HAVE_AVX2)
        if (std::strcmp(env, "avx2") == 0)
            return Isa::Avx2;
#endif
    }
#if defined(FLEG_HAVE_AVX2)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return Isa::Avx2;
#endif
    return Isa::Scalar;
}

} // namespace

Isa active_isa() {
    static const Isa isa = detect_isa();
    return isa;
}

const char* isa_name(Isa isa) {
    switch (isa) {
    case Isa::Avx2:
        return "avx2";
    default:
        return "scalar";
    }
}

#if defined(FLEG_HAVE_AVX2)
#define FLEG_DISPATCH(fn, ...) \
    return active_isa() == Isa::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#else
#define FLEG_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

double dot(const double* a, const double* b, std::size_t n) { FLEG_DISPATCH(dot, a, b, n); }
void axpy(double a, const double* x, double* y, std::size_t n) { FLEG_DISPATCH(axpy, a, x, y, n); }
double sum(const double* x, std::size_t n) { FLEG_DISPATCH(sum, x, n); }
double sumsq(const double* x, std::size_t n) { FLEG_DISPATCH(sumsq, x, n); }
double abs_diff_sum(const double* a, const double* b, std::size_t n) { FLEG_DISPATCH(abs_diff_sum, a, b, n); }
double sq_diff_sum(const double* a, const double* b, std::size_t n) { FLEG_DISPATCH(sq_diff_sum, a, b, n); }
void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bias1, double bias2) {
    FLEG_DISPATCH(adam_update, p, m, v, g, n, lr, beta1, beta2, eps, bias1, bias2);
}

#undef FLEG_DISPATCH

} // namespace fleg::kernels
