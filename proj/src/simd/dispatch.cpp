#include "rprobe/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace rprobe::simd {

namespace {

const KernelTable scalar_table{Backend::scalar,   "scalar",          scalar::dot_f64,
                               scalar::dot_f32,   scalar::axpy_f64,  scalar::axpy_f32,
                               scalar::gemv_f32};

#if defined(RPROBE_HAVE_AVX2)
const KernelTable avx2_table{Backend::avx2,   "avx2",         avx2::dot_f64, avx2::dot_f32,
                             avx2::axpy_f64,  avx2::axpy_f32, avx2::gemv_f32};

bool cpu_has_avx2() {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
#endif

#if defined(RPROBE_HAVE_NEON)
const KernelTable neon_table{Backend::neon,   "neon",         neon::dot_f64, neon::dot_f32,
                             neon::axpy_f64,  neon::axpy_f32, neon::gemv_f32};
#endif

const KernelTable* detect() {
    const KernelTable* best = &scalar_table;
#if defined(RPROBE_HAVE_AVX2)
    if (cpu_has_avx2()) best = &avx2_table;
#endif
#if defined(RPROBE_HAVE_NEON)
    best = &neon_table;
#endif
    if (const char* env = std::getenv("RPROBE_KERNELS")) {
        for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
            if (backend_name(b) == env) {
                if (const KernelTable* t = kernels_for(b)) best = t;
            }
        }
    }
    return best;
}

std::atomic<const KernelTable*>& active() {
    static std::atomic<const KernelTable*> table{detect()};
    return table;
}

}  // namespace

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

const KernelTable* kernels_for(Backend backend) {
    switch (backend) {
        case Backend::scalar:
            return &scalar_table;
        case Backend::avx2:
#if defined(RPROBE_HAVE_AVX2)
            if (cpu_has_avx2()) return &avx2_table;
#endif
            return nullptr;
        case Backend::neon:
#if defined(RPROBE_HAVE_NEON)
            return &neon_table;
#else
            return nullptr;
#endif
    }
    return nullptr;
}

bool set_backend(Backend backend) {
    const KernelTable* t = kernels_for(backend);
    if (t == nullptr) return false;
    active().store(t, std::memory_order_release);
    return true;
}

std::vector<Backend> available_backends() {
    std::vector<Backend> out;
    for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon}) {
        if (kernels_for(b) != nullptr) out.push_back(b);
    }
    return out;
}

std::string_view backend_name(Backend backend) {
    switch (backend) {
        case Backend::scalar:
            return "scalar";
        case Backend::avx2:
            return "avx2";
        case Backend::neon:
            return "neon";
    }
    return "unknown";
}

}  // namespace rprobe::simd
