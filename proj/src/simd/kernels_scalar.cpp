#include "rprobe/simd.hpp"

namespace rprobe::simd::scalar {

double dot_f64(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

float dot_f32(const float* a, const float* b, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_f32(const float* rows, std::size_t count, std::size_t stride, const float* x,
              std::size_t n, float* out) {
    for (std::size_t r = 0; r < count; ++r) out[r] = dot_f32(rows + r * stride, x, n);
}

}  // namespace rprobe::simd::scalar
