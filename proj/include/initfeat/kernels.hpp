#pragma once

// Data-parallel inner loops behind the SAE and PCA math.
//
// Every kernel has a scalar reference implementation and optional SIMD
// variants (AVX2 on x86-64, NEON on aarch64) chosen once at runtime. The
// elementwise kernels (axpy, jumprelu_gate) perform the same IEEE operations
// in the same order as the scalar path and are bitwise identical to it. dot()
// reassociates its sum in the SIMD variants and matches the reference only to
// rounding.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace initfeat::kernels {

enum class SimdLevel { scalar, avx2, neon };

std::string_view to_string(SimdLevel level);
SimdLevel parse_simd_level(std::string_view name);  // "scalar" | "avx2" | "neon"

struct KernelSet {
    SimdLevel level;
    // y[i] += alpha * x[i]
    void (*axpy_f32)(double alpha, const float* x, double* y, std::size_t n);
    void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
    double (*dot_f64)(const double* a, const double* b, std::size_t n);
    // z[i] = z[i] > theta[i] ? z[i] : 0
    void (*jumprelu_gate)(double* z, const float* theta, std::size_t n);
};

/// Levels usable on this CPU, scalar first.
std::vector<SimdLevel> available_levels();

/// Kernel table for a specific level; throws if the CPU lacks it.
const KernelSet& kernel_set(SimdLevel level);

/// The active table. Resolved on first use from INITFEAT_SIMD
/// (scalar|avx2|neon|auto, default auto = best available).
const KernelSet& active();

/// Override the active level (tests, --simd flag). Not thread-safe against
/// concurrent kernel calls; set it before starting work.
void set_active_level(SimdLevel level);

inline void axpy(double alpha, std::span<const float> x, std::span<double> y) {
    active().axpy_f32(alpha, x.data(), y.data(), y.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy_f64(alpha, x.data(), y.data(), y.size());
}
inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot_f64(a.data(), b.data(), a.size());
}
inline void jumprelu_gate(std::span<double> z, std::span<const float> theta) {
    active().jumprelu_gate(z.data(), theta.data(), z.size());
}

namespace scalar {
void axpy_f32(double alpha, const float* x, double* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void jumprelu_gate(double* z, const float* theta, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define INITFEAT_HAVE_AVX2_KERNELS 1
namespace avx2 {
void axpy_f32(double alpha, const float* x, double* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void jumprelu_gate(double* z, const float* theta, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
#define INITFEAT_HAVE_NEON_KERNELS 1
namespace neon {
void axpy_f32(double alpha, const float* x, double* y, std::size_t n);
void axpy_f64(double alpha, const double* x, double* y, std::size_t n);
double dot_f64(const double* a, const double* b, std::size_t n);
void jumprelu_gate(double* z, const float* theta, std::size_t n);
}  // namespace neon
#endif

}  // namespace initfeat::kernels
