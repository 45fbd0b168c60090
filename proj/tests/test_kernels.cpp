// Copyright Contributors to the fleg Project
// SPDX-License-Identifier: Apache-2.0

// Scalar reference vs SIMD equivalence. The scalar path is the semantics;
// the AVX2 path must agree to reordering/FMA rounding.

#include "fleg/kernels.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace fleg;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, size_t n, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (double& x : v)
        x = u(rng);
    return v;
}

// sizes straddling the 4- and 8-lane boundaries
const size_t kSizes[] = {0, 1, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 64, 100, 1023};

bool close(double a, double b, double rel = 1e-12) {
    return std::fabs(a - b) <= rel * (std::fabs(a) + std::fabs(b)) + 1e-300;
}

} // namespace

TEST_SUITE("kernels") {

TEST_CASE("active ISA resolves") {
    CHECK(kernels::isa_name(kernels::active_isa()) != nullptr);
}

#if defined(FLEG_HAVE_AVX2)
TEST_CASE("avx2 reductions match the scalar reference") {
    std::mt19937_64 rng(42);
    for (size_t n : kSizes) {
        const auto a = random_vector(rng, n);
        const auto b = random_vector(rng, n);
        CHECK(close(kernels::scalar::dot(a.data(), b.data(), n), kernels::avx2::dot(a.data(), b.data(), n)));
        CHECK(close(kernels::scalar::sum(a.data(), n), kernels::avx2::sum(a.data(), n), 1e-10));
        CHECK(close(kernels::scalar::sumsq(a.data(), n), kernels::avx2::sumsq(a.data(), n)));
        CHECK(close(kernels::scalar::abs_diff_sum(a.data(), b.data(), n),
                    kernels::avx2::abs_diff_sum(a.data(), b.data(), n)));
        CHECK(close(kernels::scalar::sq_diff_sum(a.data(), b.data(), n),
                    kernels::avx2::sq_diff_sum(a.data(), b.data(), n)));
    }
}

TEST_CASE("avx2 axpy matches the scalar reference") {
    std::mt19937_64 rng(43);
    for (size_t n : kSizes) {
        const auto x = random_vector(rng, n);
        auto y1 = random_vector(rng, n);
        auto y2 = y1;
        kernels::scalar::axpy(0.37, x.data(), y1.data(), n);
        kernels::avx2::axpy(0.37, x.data(), y2.data(), n);
        for (size_t i = 0; i < n; ++i)
            CHECK(close(y1[i], y2[i]));
    }
}

TEST_CASE("avx2 adam step matches the scalar reference") {
    std::mt19937_64 rng(44);
    for (size_t n : kSizes) {
        auto p1 = random_vector(rng, n), m1 = random_vector(rng, n, 0.0, 1.0);
        auto v1 = random_vector(rng, n, 0.0, 1.0);
        const auto g = random_vector(rng, n);
        auto p2 = p1, m2 = m1, v2 = v1;
        kernels::scalar::adam_update(p1.data(), m1.data(), v1.data(), g.data(), n, 1e-2, 0.9, 0.999, 1e-8,
                                     0.1, 0.001);
        kernels::avx2::adam_update(p2.data(), m2.data(), v2.data(), g.data(), n, 1e-2, 0.9, 0.999, 1e-8,
                                   0.1, 0.001);
        for (size_t i = 0; i < n; ++i) {
            CHECK(close(p1[i], p2[i], 1e-11));
            CHECK(close(m1[i], m2[i]));
            CHECK(close(v1[i], v2[i]));
        }
    }
}
#endif

TEST_CASE("scalar reference sanity") {
    const double a[] = {1.0, 2.0, 3.0};
    const double b[] = {4.0, -5.0, 6.0};
    CHECK(kernels::scalar::dot(a, b, 3) == doctest::Approx(4.0 - 10.0 + 18.0));
    CHECK(kernels::scalar::sum(a, 3) == 6.0);
    CHECK(kernels::scalar::sumsq(b, 3) == doctest::Approx(16.0 + 25.0 + 36.0));
    CHECK(kernels::scalar::abs_diff_sum(a, b, 3) == doctest::Approx(3.0 + 7.0 + 3.0));
    CHECK(kernels::scalar::sq_diff_sum(a, b, 3) == doctest::Approx(9.0 + 49.0 + 9.0));
}

} // TEST_SUITE
