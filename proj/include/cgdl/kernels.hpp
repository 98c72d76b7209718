#pragma once

#include <cstddef>
#include <string>

namespace cgdl::kernels {

// ============================================================================
// Dispatch table for the hot inner loops (elementwise arithmetic, reductions,
// small dense matmuls). Two implementations ship: a scalar reference and an
// AVX2 double-precision variant. The active table is chosen once at runtime
// from cpuid, overridable with CGDL_KERNELS=scalar|avx2|auto. Everything here
// operates on contiguous double arrays; shape checking lives above this layer.
//
// Matmul conventions (row-major):
//   matmul_nn: c[m x n] (+)= a[m x k] * b[k x n]
//   matmul_nt: c[m x k] (+)= a[m x n] * b[k x n]^T
//   matmul_tn: c[k x n] (+)= a[m x k]^T * b[m x n]
// With acc == false the output is overwritten, otherwise accumulated into.
// ============================================================================

struct Ops {
    const char* name;

    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    void (*div)(const double* a, const double* b, double* out, std::size_t n);
    void (*scale)(const double* a, double s, double* out, std::size_t n);
    // out += s * a
    void (*axpy)(double s, const double* a, double* out, std::size_t n);
    // out += a ⊙ b
    void (*mul_acc)(const double* a, const double* b, double* out, std::size_t n);
    // out_i += s
    void (*add_scalar)(double s, double* out, std::size_t n);
    void (*vabs)(const double* a, double* out, std::size_t n);
    void (*vsqrt)(const double* a, double* out, std::size_t n);

    double (*sum)(const double* a, std::size_t n);
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*abs_diff_sum)(const double* a, const double* b, std::size_t n);

    void (*matmul_nn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n, bool acc);
    void (*matmul_nt)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n, bool acc);
    void (*matmul_tn)(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n, bool acc);
};

// Reference implementation; always available and the oracle for equivalence tests.
const Ops& scalar();

#if defined(CGDL_HAVE_AVX2_KERNELS)
const Ops& avx2();
#endif

// True when the running CPU can execute the AVX2 variant.
bool cpu_supports_avx2();

// The runtime-selected table. First call resolves CGDL_KERNELS; later calls
// are a plain load. Throws config_error on an unrecognized override value.
const Ops& active();

// Test hook: force a table by name ("scalar", "avx2", "auto").
void force(const std::string& name);

}  // namespace cgdl::kernels
