#include "initfeat/kernels.hpp"

namespace initfeat::kernels::scalar {

void axpy_f32(double alpha, const float* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * static_cast<double>(x[i]);
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void jumprelu_gate(double* z, const float* theta, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!(z[i] > static_cast<double>(theta[i]))) z[i] = 0.0;
}

}  // namespace initfeat::kernels::scalar
