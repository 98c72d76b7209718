#include <atomic>
#include <cstdlib>
#include <string>

#include "cgdl/errors.hpp"
#include "cgdl/kernels.hpp"

namespace cgdl::kernels {

bool cpu_supports_avx2() {
#if defined(CGDL_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

std::atomic<const Ops*> g_active{nullptr};

const Ops& resolve(const std::string& name) {
    if (name == "scalar") return scalar();
    if (name == "avx2") {
#if defined(CGDL_HAVE_AVX2_KERNELS)
        if (cpu_supports_avx2()) return avx2();
        throw config_error("CGDL_KERNELS=avx2 requested but this CPU lacks AVX2/FMA");
#else
        throw config_error("CGDL_KERNELS=avx2 requested but this build has no AVX2 kernels");
#endif
    }
    if (name == "auto" || name.empty()) {
#if defined(CGDL_HAVE_AVX2_KERNELS)
        if (cpu_supports_avx2()) return avx2();
#endif
        return scalar();
    }
    throw config_error("unrecognized CGDL_KERNELS value '" + name +
                       "' (expected scalar, avx2, or auto)");
}

}  // namespace

const Ops& active() {
    const Ops* t = g_active.load(std::memory_order_acquire);
    if (t) return *t;
    const char* env = std::getenv("CGDL_KERNELS");
    const Ops& chosen = resolve(env ? env : "auto");
    g_active.store(&chosen, std::memory_order_release);
    return chosen;
}

void force(const std::string& name) {
    g_active.store(&resolve(name), std::memory_order_release);
}

}  // namespace cgdl::kernels
