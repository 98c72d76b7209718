#include <cmath>
#include <cstddef>

#include "cgdl/kernels.hpp"

// Scalar reference kernels. Deliberately plain loops: this is the behavioral
// oracle the SIMD variant is tested against.

namespace cgdl::kernels {
namespace {

void k_add(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void k_sub(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void k_mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void k_div(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}

void k_scale(const double* a, double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

void k_axpy(double s, const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += s * a[i];
}

void k_mul_acc(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

void k_add_scalar(double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] += s;
}

void k_vabs(const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(a[i]);
}

void k_vsqrt(const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]);
}

double k_sum(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double k_dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double k_abs_diff_sum(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
    return acc;
}

void k_matmul_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        if (!acc)
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void k_matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
    // c[m x k] (+)= a[m x n] * b[k x n]^T, i.e. c[i][j] = dot(a row i, b row j).
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
    // c[k x n] (+)= a[m x k]^T * b[m x n].
    if (!acc)
        for (std::size_t i = 0; i < k * n; ++i) c[i] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double* brow = b + i * n;
        for (std::size_t j = 0; j < k; ++j) {
            const double av = a[i * k + j];
            double* crow = c + j * n;
            for (std::size_t p = 0; p < n; ++p) crow[p] += av * brow[p];
        }
    }
}

}  // namespace

const Ops& scalar() {
    static const Ops table = {
        .name = "scalar",
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
