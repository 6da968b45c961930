#pragma once

// Independent reference implementations used only by tests. They share no
// code with the library: plain loops, no kernels, no early exits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

/// Cyclic Jacobi eigenvalues of a symmetric n×n row-major matrix, descending.
inline std::vector<double> jacobi_eigenvalues(std::vector<double> a, std::size_t n) {
    auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (std::abs(at(p, q)) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
            }
        }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = at(i, i);
    std::sort(ev.begin(), ev.end(), std::greater<>());
    return ev;
}

/// Eigenvalues of (1/n)·UᵀU for unit-normalized rows of U, via the d×d matrix.
inline std::vector<double> pca_spectrum(const std::vector<std::vector<double>>& rows) {
    const std::size_t n = rows.size(), d = rows.front().size();
    std::vector<std::vector<double>> u = rows;
    for (auto& r : u) {
        double s = 0.0;
        for (double x : r) s += x * x;
        s = std::sqrt(s);
        for (double& x : r) x /= s;
    }
    std::vector<double> c(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += u[k][i] * u[k][j];
            c[i * d + j] = s / static_cast<double>(n);
        }
    return jacobi_eigenvalues(c, d);
}

/// Dense SAE encode straight from the definition.
inline std::vector<double> encode(const std::vector<float>& w_enc, const std::vector<float>& b_enc,
                                  const std::vector<float>& theta, std::size_t d_model, std::size_t d_sae,
                                  const float* h) {
    std::vector<double> a(d_sae);
    for (std::size_t j = 0; j < d_sae; ++j) {
        double z = 0.0;
        for (std::size_t i = 0; i < d_model; ++i) z += static_cast<double>(w_enc[i * d_sae + j]) * h[i];
        z += b_enc[j];
        a[j] = z > theta[j] ? z : 0.0;
    }
    return a;
}

/// Dense decode straight from the definition.
inline std::vector<double> decode(const std::vector<float>& w_dec, const std::vector<float>& b_dec,
                                  std::size_t d_model, const std::vector<double>& a) {
    std::vector<double> h(d_model);
    for (std::size_t i = 0; i < d_model; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * w_dec[j * d_model + i];
        h[i] = s + b_dec[i];
    }
    return h;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace oracle
