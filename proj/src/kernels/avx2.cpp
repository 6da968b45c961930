// Compiled with -mavx2 only (no -mfma): mul and add stay separate so the
// elementwise kernels round exactly like the scalar reference.

#include "initfeat/kernels.hpp"

#include <immintrin.h>

namespace initfeat::kernels::avx2 {

void axpy_f32(double alpha, const float* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 xf = _mm256_loadu_ps(x + i);
        const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(xf));
        const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(xf, 1));
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, lo)));
        _mm256_storeu_pd(y + i + 4,
                         _mm256_add_pd(_mm256_loadu_pd(y + i + 4), _mm256_mul_pd(va, hi)));
    }
    for (; i < n; ++i) y[i] += alpha * static_cast<double>(x[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, vx)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(acc1,
                             _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, _mm256_add_pd(acc0, acc1));
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void jumprelu_gate(double* z, const float* theta, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d vz = _mm256_loadu_pd(z + i);
        const __m256d vt = _mm256_cvtps_pd(_mm_loadu_ps(theta + i));
        const __m256d keep = _mm256_cmp_pd(vz, vt, _CMP_GT_OQ);
        _mm256_storeu_pd(z + i, _mm256_and_pd(vz, keep));
    }
    for (; i < n; ++i)
        if (!(z[i] > static_cast<double>(theta[i]))) z[i] = 0.0;
}

}  // namespace initfeat::kernels::avx2
