#include "ismeta/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace ismeta::kernels {

namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend initial_backend() noexcept {
    if (const char* env = std::getenv("ISMETA_KERNELS"); env != nullptr && std::string(env) == "scalar")
        return Backend::Scalar;
    return cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() noexcept {
    static std::atomic<Backend> b{initial_backend()};
    return b;
}

inline bool use_avx2() noexcept { return current().load(std::memory_order_relaxed) == Backend::Avx2; }

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": length mismatch");
}

}  // namespace

bool backend_available(Backend b) noexcept { return b == Backend::Scalar || cpu_has_avx2(); }

Backend active_backend() noexcept { return current().load(); }

void set_backend(Backend b) {
    if (!backend_available(b)) throw std::invalid_argument("kernel backend not supported on this CPU");
    current().store(b);
}

std::string_view backend_name(Backend b) noexcept { return b == Backend::Avx2 ? "avx2" : "scalar"; }

double gaussian_mixture_sum(std::span<const double> centers, std::span<const double> inv_scales,
                            std::span<const double> coefs, double x) {
    require_same_size(centers.size(), inv_scales.size(), "gaussian_mixture_sum");
    require_same_size(centers.size(), coefs.size(), "gaussian_mixture_sum");
    return use_avx2() ? avx2::gaussian_mixture_sum(centers.data(), inv_scales.data(), coefs.data(), centers.size(), x)
                      : scalar::gaussian_mixture_sum(centers.data(), inv_scales.data(), coefs.data(), centers.size(), x);
}

double gaussian_kernel_sum(std::span<const double> centers, double inv_scale, double x) {
    return use_avx2() ? avx2::gaussian_kernel_sum(centers.data(), centers.size(), inv_scale, x)
                      : scalar::gaussian_kernel_sum(centers.data(), centers.size(), inv_scale, x);
}

double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    return use_avx2() ? avx2::dot(a.data(), b.data(), a.size()) : scalar::dot(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_same_size(x.size(), y.size(), "axpy");
    if (use_avx2())
        avx2::axpy(alpha, x.data(), y.data(), x.size());
    else
        scalar::axpy(alpha, x.data(), y.data(), x.size());
}

WeightedMoments weighted_moments(std::span<const double> w, std::span<const double> x) {
    require_same_size(w.size(), x.size(), "weighted_moments");
    return use_avx2() ? avx2::weighted_moments(w.data(), x.data(), w.size())
                      : scalar::weighted_moments(w.data(), x.data(), w.size());
}

}  // namespace ismeta::kernels
