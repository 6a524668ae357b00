#include "vsmk/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>

#include "vsmk/errors.hpp"

#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
#define VSMK_X86 1
#endif

namespace vsmk::simd {

namespace detail {
const KernelTable* avx2_table_compiled();
}

bool avx2_supported() {
#if defined(VSMK_X86) && defined(__GNUC__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const KernelTable* avx2_table() {
    if (!avx2_supported()) return nullptr;
    return detail::avx2_table_compiled();
}

namespace {

const KernelTable* resolve(Backend b) {
    switch (b) {
        case Backend::Scalar:
            return &scalar_table();
        case Backend::Avx2: {
            const KernelTable* t = avx2_table();
            if (!t) throw ConfigError("simd backend 'avx2' requested but not available on this CPU");
            return t;
        }
        case Backend::Auto:
        default: {
            const KernelTable* t = avx2_table();
            return t ? t : &scalar_table();
        }
    }
}

std::atomic<const KernelTable*> g_active{nullptr};
std::atomic<Backend> g_backend{Backend::Auto};

const KernelTable* initial_table() {
    // Environment override, mainly for tests and debugging.
    if (const char* env = std::getenv("VSMK_SIMD")) {
        Backend b = parse_backend(env);
        g_backend.store(b);
        return resolve(b);
    }
    return resolve(Backend::Auto);
}

}  // namespace

Backend parse_backend(const std::string& name) {
    if (name == "auto") return Backend::Auto;
    if (name == "scalar") return Backend::Scalar;
    if (name == "avx2") return Backend::Avx2;
    throw ConfigError("unknown simd backend '" + name + "' (expected auto|scalar|avx2)");
}

void set_backend(Backend b) {
    g_active.store(resolve(b));
    g_backend.store(b);
}

Backend backend() { return g_backend.load(); }

const KernelTable& kernels() {
    const KernelTable* t = g_active.load();
    if (!t) {
        t = initial_table();
        g_active.store(t);
    }
    return *t;
}

}  // namespace vsmk::simd
