#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; vectorized variants (AVX2+FMA on x86-64, NEON on aarch64)
// are selected once at startup from the detected CPU features. Setting
// RPROBE_KERNELS=scalar|avx2|neon in the environment overrides the choice.

#include <cstddef>
#include <string_view>
#include <vector>

namespace rprobe::simd {

enum class Backend { scalar, avx2, neon };

struct KernelTable {
    Backend backend;
    const char* name;

    double (*dot_f64)(const double* a, const double* b, std::size_t n);
    float (*dot_f32)(const float* a, const float* b, std::size_t n);
    // y += alpha * x
    void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
    void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
    // out[r] = dot(rows + r*stride, x, n) for r in [0, count)
    void (*gemv_f32)(const float* rows, std::size_t count, std::size_t stride,
                     const float* x, std::size_t n, float* out);
};

// The active table. Thread-safe after first call.
const KernelTable& kernels();

// Table for a specific backend, or nullptr when this build/CPU lacks it.
const KernelTable* kernels_for(Backend backend);

// Force the active backend (tests, --deterministic). Returns false and leaves
// the selection unchanged if the backend is unavailable.
bool set_backend(Backend backend);

std::vector<Backend> available_backends();

std::string_view backend_name(Backend backend);

namespace scalar {
double dot_f64(const double* a, const double* b, std::size_t n);
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void gemv_f32(const float* rows, std::size_t count, std::size_t stride, const float* x,
              std::size_t n, float* out);
}  // namespace scalar

#if defined(RPROBE_HAVE_AVX2)
namespace avx2 {
double dot_f64(const double* a, const double* b, std::size_t n);
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void gemv_f32(const float* rows, std::size_t count, std::size_t stride, const float* x,
              std::size_t n, float* out);
}  // namespace avx2
#endif

#if defined(RPROBE_HAVE_NEON)
namespace neon {
double dot_f64(const double* a, const double* b, std::size_t n);
float dot_f32(const float* a, const float* b, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
void axpy_f32(float alpha, const float* x, float* y, std::size_t n);
void gemv_f32(const float* rows, std::size_t count, std::size_t stride, const float* x,
              std::size_t n, float* out);
}  // namespace neon
#endif

}  // namespace rprobe::simd
