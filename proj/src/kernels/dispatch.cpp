#include "initfeat/kernels.hpp"

#include "initfeat/common.hpp"

#include <spdlog/spdlog.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace initfeat::kernels {

namespace {

constexpr KernelSet kScalar{SimdLevel::scalar, scalar::axpy_f32, scalar::axpy_f64,
                            scalar::dot_f64, scalar::jumprelu_gate};
#ifdef INITFEAT_HAVE_AVX2_KERNELS
constexpr KernelSet kAvx2{SimdLevel::avx2, avx2::axpy_f32, avx2::axpy_f64, avx2::dot_f64,
                          avx2::jumprelu_gate};
#endif
#ifdef INITFEAT_HAVE_NEON_KERNELS
constexpr KernelSet kNeon{SimdLevel::neon, neon::axpy_f32, neon::axpy_f64, neon::dot_f64,
                          neon::jumprelu_gate};
#endif

bool cpu_has(SimdLevel level) {
    switch (level) {
        case SimdLevel::scalar:
            return true;
        case SimdLevel::avx2:
#ifdef INITFEAT_HAVE_AVX2_KERNELS
            return __builtin_cpu_supports("avx2");
#else
            return false;
#endif
        case SimdLevel::neon:
#ifdef INITFEAT_HAVE_NEON_KERNELS
            return true;  // baseline on aarch64
#else
            return false;
#endif
    }
    return false;
}

const KernelSet* resolve_initial() {
    const char* env = std::getenv("INITFEAT_SIMD");
    if (env != nullptr && std::string_view(env) != "auto" && *env != '\0') {
        const SimdLevel want = parse_simd_level(env);
        if (cpu_has(want)) return &kernel_set(want);
        spdlog::warn("INITFEAT_SIMD={} not supported on this CPU; using best available", env);
    }
    return &kernel_set(available_levels().back());
}

std::atomic<const KernelSet*> g_active{nullptr};

}  // namespace

std::string_view to_string(SimdLevel level) {
    switch (level) {
        case SimdLevel::scalar: return "scalar";
        case SimdLevel::avx2: return "avx2";
        case SimdLevel::neon: return "neon";
    }
    return "?";
}

SimdLevel parse_simd_level(std::string_view name) {
    if (name == "scalar") return SimdLevel::scalar;
    if (name == "avx2") return SimdLevel::avx2;
    if (name == "neon") return SimdLevel::neon;
    throw UsageError("unknown SIMD level '" + std::string(name) + "' (scalar|avx2|neon)");
}

std::vector<SimdLevel> available_levels() {
    std::vector<SimdLevel> out{SimdLevel::scalar};
    if (cpu_has(SimdLevel::avx2)) out.push_back(SimdLevel::avx2);
    if (cpu_has(SimdLevel::neon)) out.push_back(SimdLevel::neon);
    return out;
}

const KernelSet& kernel_set(SimdLevel level) {
    if (!cpu_has(level))
        throw UsageError("SIMD level " + std::string(to_string(level)) + " unavailable on this CPU");
    switch (level) {
#ifdef INITFEAT_HAVE_AVX2_KERNELS
        case SimdLevel::avx2: return kAvx2;
#endif
#ifdef INITFEAT_HAVE_NEON_KERNELS
        case SimdLevel::neon: return kNeon;
#endif
        default: return kScalar;
    }
}

const KernelSet& active() {
    const KernelSet* k = g_active.load(std::memory_order_acquire);
    if (k == nullptr) {
        const KernelSet* fresh = resolve_initial();
        if (g_active.compare_exchange_strong(k, fresh, std::memory_order_acq_rel)) k = fresh;
    }
    return *k;
}

void set_active_level(SimdLevel level) {
    g_active.store(&kernel_set(level), std::memory_order_release);
}

}  // namespace initfeat::kernels
