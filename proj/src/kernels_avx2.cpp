// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma; only reached after the runtime CPU check.

#include "fleg/kernels.hpp"

#if defined(FLEG_HAVE_AVX2)

#include <immintrin.h>

#include <cmath>

namespace fleg::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline __m256d abs_pd(__m256d v) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    return _mm256_and_pd(v, mask);
}

} // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i)
        acc += a[i] * b[i];
    return acc;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    const __m256d av = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d yv = _mm256_loadu_pd(y + i);
        yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), yv);
        _mm256_storeu_pd(y + i, yv);
    }
    for (; i < n; ++i)
        y[i] += a * x[i];
}

double sum(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
    double s = hsum(acc);
    for (; i < n; ++i)
        s += x[i];
    return s;
}

double sumsq(const double* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i)
        s += x[i] * x[i];
    return s;
}

double abs_diff_sum(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, abs_pd(d));
    }
    double s = hsum(acc);
    for (; i < n; ++i)
        s += std::fabs(a[i] - b[i]);
    return s;
}

double sq_diff_sum(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_fmadd_pd(d, d, acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void adam_update(double* p, double* m, double* v, const double* g, std::size_t n,
                 double lr, double beta1, double beta2, double eps, double bias1, double bias2) {
    const __m256d b1 = _mm256_set1_pd(beta1);
    const __m256d one_b1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d b2 = _mm256_set1_pd(beta2);
    const __m256d one_b2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d inv_bias1 = _mm256_set1_pd(1.0 / bias1);
    const __m256d inv_bias2 = _mm256_set1_pd(1.0 / bias2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d gv = _mm256_loadu_pd(g + i);
        __m256d mv = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(one_b1, gv));
        __m256d vv = _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i), _mm256_mul_pd(one_b2, _mm256_mul_pd(gv, gv)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_mul_pd(mv, inv_bias1);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_mul_pd(vv, inv_bias2)), epsv);
        const __m256d step = _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom);
        _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
    }
    if (i < n)
        scalar::adam_update(p + i, m + i, v + i, g + i, n - i, lr, beta1, beta2, eps, bias1, bias2);
}

} // namespace fleg::kernels::avx2

#endif // FLEG_HAVE_AVX2
