#include "initfeat/kernels.hpp"

#include <arm_neon.h>

namespace initfeat::kernels::neon {

void axpy_f32(double alpha, const float* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const float32x4_t xf = vld1q_f32(x + i);
        const float64x2_t lo = vcvt_f64_f32(vget_low_f32(xf));
        const float64x2_t hi = vcvt_high_f64_f32(xf);
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, lo)));
        vst1q_f64(y + i + 2, vaddq_f64(vld1q_f64(y + i + 2), vmulq_f64(va, hi)));
    }
    for (; i < n; ++i) y[i] += alpha * static_cast<double>(x[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2)
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    float64x2_t acc0 = vdupq_n_f64(0.0);
    float64x2_t acc1 = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 = vaddq_f64(acc0, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
        acc1 = vaddq_f64(acc1, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
    }
    const float64x2_t acc = vaddq_f64(acc0, acc1);
    double s = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void jumprelu_gate(double* z, const float* theta, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const float64x2_t vz = vld1q_f64(z + i);
        const float64x2_t vt = vcvt_f64_f32(vld1_f32(theta + i));
        const uint64x2_t keep = vcgtq_f64(vz, vt);
        vst1q_f64(z + i, vbslq_f64(keep, vz, vdupq_n_f64(0.0)));
    }
    for (; i < n; ++i)
        if (!(z[i] > static_cast<double>(theta[i]))) z[i] = 0.0;
}

}  // namespace initfeat::kernels::neon
