// AVX2 double-precision kernels: 4-wide main loops with scalar remainders.
// This translation unit is the only one compiled with -mavx2 -mfma; it is
// reached only through the dispatch table after a cpuid check.

#if defined(CGDL_HAVE_AVX2_KERNELS)

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "cgdl/kernels.hpp"

namespace cgdl::kernels {
namespace {

inline double hsum256(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s2 = _mm_add_pd(lo, hi);
    const __m128d s1 = _mm_add_sd(s2, _mm_unpackhi_pd(s2, s2));
    return _mm_cvtsd_f64(s1);
}

void k_add(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void k_div(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] / b[i];
}

void k_scale(const double* a, double s, double* out, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vs));
    for (; i < n; ++i) out[i] = a[i] * s;
}

void k_axpy(double s, const double* a, double* out, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i,
                         _mm256_fmadd_pd(vs, _mm256_loadu_pd(a + i), _mm256_loadu_pd(out + i)));
    for (; i < n; ++i) out[i] = std::fma(s, a[i], out[i]);
}

void k_mul_acc(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                                  _mm256_loadu_pd(out + i)));
    for (; i < n; ++i) out[i] = std::fma(a[i], b[i], out[i]);
}

void k_add_scalar(double s, double* out, std::size_t n) {
    const __m256d vs = _mm256_set1_pd(s);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), vs));
    for (; i < n; ++i) out[i] += s;
}

void k_vabs(const double* a, double* out, std::size_t n) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_and_pd(_mm256_loadu_pd(a + i), mask));
    for (; i < n; ++i) out[i] = std::fabs(a[i]);
}

void k_vsqrt(const double* a, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_sqrt_pd(_mm256_loadu_pd(a + i)));
    for (; i < n; ++i) out[i] = std::sqrt(a[i]);
}

double k_sum(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double s = hsum256(acc);
    for (; i < n; ++i) s += a[i];
    return s;
}

double k_dot(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
    double s = hsum256(acc);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double k_abs_diff_sum(const double* a, const double* b, std::size_t n) {
    const __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffLL));
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_and_pd(d, mask));
    }
    double s = hsum256(acc);
    for (; i < n; ++i) s += std::fabs(a[i] - b[i]);
    return s;
}

void k_matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const __m256d av = _mm256_set1_pd(a[i * k + p]);
            const double* brow = b + p * n;
            std::size_t j = 0;
            for (; j + 4 <= n; j += 4)
                _mm256_storeu_pd(crow + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j),
                                                           _mm256_loadu_pd(crow + j)));
            for (; j < n; ++j) crow[j] = std::fma(a[i * k + p], brow[j], crow[j]);
        }
    }
}

void k_matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        for (std::size_t j = 0; j < k; ++j) {
            const double d = k_dot(arow, b + j * n, n);
            c[i * k + j] = acc ? c[i * k + j] + d : d;
        }
    }
}

void k_matmul_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
    if (!acc)
        for (std::size_t i = 0; i < k * n; ++i) c[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t j = 0; j < k; ++j) {
            const __m256d av = _mm256_set1_pd(a[i * k + j]);
            double* crow = c + j * n;
            std::size_t p = 0;
            for (; p + 4 <= n; p += 4)
                _mm256_storeu_pd(crow + p, _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + p),
                                                           _mm256_loadu_pd(crow + p)));
            for (; p < n; ++p) crow[p] = std::fma(a[i * k + j], brow[p], crow[p]);
        }
    }
}

}  // namespace

const Ops& avx2() {
    static const Ops table = {
        .name = "avx2",
        .add = k_add,
        .sub = k_sub,
        .mul = k_mul,
        .div = k_div,
        .scale = k_scale,
        .axpy = k_axpy,
        .mul_acc = k_mul_acc,
        .add_scalar = k_add_scalar,
        .vabs = k_vabs,
        .vsqrt = k_vsqrt,
        .sum = k_sum,
        .dot = k_dot,
        .abs_diff_sum = k_abs_diff_sum,
        .matmul_nn = k_matmul_nn,
        .matmul_nt = k_matmul_nt,
        .matmul_tn = k_matmul_tn,
    };
    return table;
}

}  // namespace cgdl::kernels

#endif  // CGDL_HAVE_AVX2_KERNELS
