#include <cstdlib>
#include <cstring>

#include "dmg/simd.hpp"

namespace dmg::simd {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

namespace {

const Kernels& select() {
    if (const char* env = std::getenv("DMG_SIMD")) {
        if (std::strcmp(env, "scalar") == 0) return scalar_kernels();
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2()) fail("DMG_SIMD=avx2 requested but CPU lacks AVX2/FMA");
            return avx2_kernels();
        }
        // anything else (e.g. "auto") falls through to detection
    }
    return cpu_has_avx2() ? avx2_kernels() : scalar_kernels();
}

} // namespace

const Kernels& active() {
    static const Kernels& k = select();
    return k;
}

std::string active_name() { return active().name; }

} // namespace dmg::simd
