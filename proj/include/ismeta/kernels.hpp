#pragma once

// Data-parallel numeric kernels used by density evaluation, importance-weight
// reductions and parameter updates.
//
// Every kernel has a scalar reference implementation and an AVX2+FMA variant.
// The variant is picked once at startup from CPUID; ISMETA_KERNELS=scalar in
// the environment or set_backend() forces the reference path. Results of the
// two paths agree to within a few ulps per accumulated term but are not
// bit-identical, since the vector path reassociates sums.

#include <cstddef>
#include <span>
#include <string_view>

namespace ismeta::kernels {

enum class Backend { Scalar, Avx2 };

struct WeightedMoments {
    double sum = 0.0;     // Σ w_i·x_i
    double sum_sq = 0.0;  // Σ (w_i·x_i)²
    double max = 0.0;     // max w_i·x_i (0 for empty input)
};

bool backend_available(Backend b) noexcept;
Backend active_backend() noexcept;
/// Throws std::invalid_argument if the backend is not supported on this CPU.
void set_backend(Backend b);
std::string_view backend_name(Backend b) noexcept;

/// Σ_i coef_i · exp(-½ ((x - center_i) · inv_scale_i)²)
double gaussian_mixture_sum(std::span<const double> centers, std::span<const double> inv_scales,
                            std::span<const double> coefs, double x);

/// Σ_i exp(-½ ((x - center_i) · inv_scale)²)
double gaussian_kernel_sum(std::span<const double> centers, double inv_scale, double x);

double dot(std::span<const double> a, std::span<const double> b);

/// y += alpha · x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// Moments of the elementwise product w ⊙ x.
WeightedMoments weighted_moments(std::span<const double> w, std::span<const double> x);

namespace scalar {
double gaussian_mixture_sum(const double* centers, const double* inv_scales, const double* coefs,
                            std::size_t n, double x) noexcept;
double gaussian_kernel_sum(const double* centers, std::size_t n, double inv_scale, double x) noexcept;
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
WeightedMoments weighted_moments(const double* w, const double* x, std::size_t n) noexcept;
}  // namespace scalar

namespace avx2 {
double gaussian_mixture_sum(const double* centers, const double* inv_scales, const double* coefs,
                            std::size_t n, double x) noexcept;
double gaussian_kernel_sum(const double* centers, std::size_t n, double inv_scale, double x) noexcept;
double dot(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
WeightedMoments weighted_moments(const double* w, const double* x, std::size_t n) noexcept;
/// Vector exp used by the Gaussian kernels; exposed for testing.
void exp_array(const double* in, double* out, std::size_t n) noexcept;
}  // namespace avx2

}  // namespace ismeta::kernels
