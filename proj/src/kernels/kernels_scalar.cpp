#include "ismeta/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ismeta::kernels::scalar {

double gaussian_mixture_sum(const double* centers, const double* inv_scales, const double* coefs,
                            std::size_t n, double x) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = (x - centers[i]) * inv_scales[i];
        acc += coefs[i] * std::exp(-0.5 * z * z);
    }
    return acc;
}

double gaussian_kernel_sum(const double* centers, std::size_t n, double inv_scale, double x) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = (x - centers[i]) * inv_scale;
        acc += std::exp(-0.5 * z * z);
    }
    return acc;
}

double dot(const double* a, const double* b, std::size_t n) noexcept {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

WeightedMoments weighted_moments(const double* w, const double* x, std::size_t n) noexcept {
    WeightedMoments m;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = w[i] * x[i];
        m.sum += v;
        m.sum_sq += v * v;
        if (i == 0 || v > m.max) m.max = v;
    }
    return m;
}

}  // namespace ismeta::kernels::scalar
