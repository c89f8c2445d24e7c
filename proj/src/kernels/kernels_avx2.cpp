// Compiled with -mavx2 -mfma. Only reached through the dispatcher after a
// CPUID check, so the rest of the library stays baseline x86-64.

#include "ismeta/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#define ISMETA_HAVE_AVX2 1
#include <immintrin.h>
#else
#define ISMETA_HAVE_AVX2 0
#endif

#include <cmath>

namespace ismeta::kernels::avx2 {

#if ISMETA_HAVE_AVX2

namespace {

// Cephes-style exp: x = n·ln2 + r with |r| ≤ ln2/2, then a (2,3) Padé form.
// Inputs below -708 flush to zero (no denormal results).
inline __m256d exp_pd(__m256d x) {
    const __m256d lo = _mm256_set1_pd(-708.0);
    const __m256d hi = _mm256_set1_pd(709.0);
    const __m256d underflow = _mm256_cmp_pd(x, lo, _CMP_LT_OQ);
    x = _mm256_min_pd(_mm256_max_pd(x, lo), hi);

    const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
    const __m256d c1 = _mm256_set1_pd(6.93145751953125E-1);
    const __m256d c2 = _mm256_set1_pd(1.42860682030941723212E-6);

    __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    __m256d r = _mm256_fnmadd_pd(n, c1, x);
    r = _mm256_fnmadd_pd(n, c2, r);
    const __m256d rr = _mm256_mul_pd(r, r);

    __m256d p = _mm256_set1_pd(1.26177193074810590878E-4);
    p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(3.02994407707441961300E-2));
    p = _mm256_fmadd_pd(p, rr, _mm256_set1_pd(9.99999999999999999910E-1));
    p = _mm256_mul_pd(p, r);

    __m256d q = _mm256_set1_pd(3.00198505138664455042E-6);
    q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.52448340349684104192E-3));
    q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.27265548208155028766E-1));
    q = _mm256_fmadd_pd(q, rr, _mm256_set1_pd(2.00000000000000000009E0));

    __m256d e = _mm256_div_pd(p, _mm256_sub_pd(q, p));
    e = _mm256_fmadd_pd(e, _mm256_set1_pd(2.0), _mm256_set1_pd(1.0));

    // 2^n via the exponent field: (n + 1023) << 52.
    const __m256d magic = _mm256_set1_pd(4503599627370496.0);  // 2^52
    __m256i bits = _mm256_castpd_si256(_mm256_add_pd(_mm256_add_pd(n, _mm256_set1_pd(1023.0)), magic));
    bits = _mm256_slli_epi64(bits, 52);
    const __m256d scale = _mm256_castsi256_pd(bits);

    return _mm256_andnot_pd(underflow, _mm256_mul_pd(e, scale));
}

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hmax(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d m = _mm_max_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_max_sd(m, _mm_unpackhi_pd(m, m)));
}

}  // namespace

void exp_array(const double* in, double* out, std::size_t n) noexcept {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp_pd(_mm256_loadu_pd(in + i)));
    if (i < n) {
        alignas(32) double buf[4] = {0.0, 0.0, 0.0, 0.0};
        for (std::size_t j = i; j < n; ++j) buf[j - i] = in[j];
        _mm256_store_pd(buf, exp_pd(_mm256_load_pd(buf)));
        for (std::size_t j = i; j < n; ++j) out[j] = buf[j - i];
    }
}

double gaussian_mixture_sum(const double* centers, const double* inv_scales, const double* coefs,
                            std::size_t n, double x) noexcept {
    const __m256d vx = _mm256_set1_pd(x);
    const __m256d mhalf = _mm256_set1_pd(-0.5);
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d z = _mm256_mul_pd(_mm256_sub_pd(vx, _mm256_loadu_pd(centers + i)),
                                        _mm256_loadu_pd(inv_scales + i));
        const __m256d e = exp_pd(_mm256_mul_pd(mhalf, _mm256_mul_pd(z, z)));
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(coefs + i), e, acc);
    }
    double total = hsum(acc);
    for (; i < n; ++i) {
        const double z = (x - centers[i]) * inv_scales[i];
        total += coefs[i] * std::exp(-0.5 * z * z);
    }
    return total;
}

double gaussian_kernel_sum(const double* centers, std::size_t n, double inv_scale, double x) noexcept {
    const __m256d vx = _mm256_set1_pd(x);
    const __m256d vs = _mm256_set1_pd(inv_scale);
    const __m256d mhalf = _mm256_set1_pd(-0.5);
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256d z0 = _mm256_mul_pd(_mm256_sub_pd(vx, _mm256_loadu_pd(centers + i)), vs);
        const __m256d z1 = _mm256_mul_pd(_mm256_sub_pd(vx, _mm256_loadu_pd(centers + i + 4)), vs);
        acc0 = _mm256_add_pd(acc0, exp_pd(_mm256_mul_pd(mhalf, _mm256_mul_pd(z0, z0))));
        acc1 = _mm256_add_pd(acc1, exp_pd(_mm256_mul_pd(mhalf, _mm256_mul_pd(z1, z1))));
    }
    for (; i + 4 <= n; i += 4) {
        const __m256d z = _mm256_mul_pd(_mm256_sub_pd(vx, _mm256_loadu_pd(centers + i)), vs);
        acc0 = _mm256_add_pd(acc0, exp_pd(_mm256_mul_pd(mhalf, _mm256_mul_pd(z, z))));
    }
    double total = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        const double z = (x - centers[i]) * inv_scale;
        total += std::exp(-0.5 * z * z);
    }
    return total;
}

double dot(const double* a, const double* b, std::size_t n) noexcept {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    double total = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

WeightedMoments weighted_moments(const double* w, const double* x, std::size_t n) noexcept {
    WeightedMoments m;
    if (n == 0) return m;
    __m256d sum = _mm256_setzero_pd();
    __m256d sq = _mm256_setzero_pd();
    __m256d mx = _mm256_set1_pd(w[0] * x[0]);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_mul_pd(_mm256_loadu_pd(w + i), _mm256_loadu_pd(x + i));
        sum = _mm256_add_pd(sum, v);
        sq = _mm256_fmadd_pd(v, v, sq);
        mx = _mm256_max_pd(mx, v);
    }
    m.sum = hsum(sum);
    m.sum_sq = hsum(sq);
    m.max = hmax(mx);
    for (; i < n; ++i) {
        const double v = w[i] * x[i];
        m.sum += v;
        m.sum_sq += v * v;
        if (v > m.max) m.max = v;
    }
    return m;
}

#else  // no AVX2 at compile time: the dispatcher never selects these

void exp_array(const double* in, double* out, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(in[i]);
}
double gaussian_mixture_sum(const double* c, const double* s, const double* w, std::size_t n, double x) noexcept {
    return scalar::gaussian_mixture_sum(c, s, w, n, x);
}
double gaussian_kernel_sum(const double* c, std::size_t n, double s, double x) noexcept {
    return scalar::gaussian_kernel_sum(c, n, s, x);
}
double dot(const double* a, const double* b, std::size_t n) noexcept { return scalar::dot(a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept { scalar::axpy(alpha, x, y, n); }
WeightedMoments weighted_moments(const double* w, const double* x, std::size_t n) noexcept {
    return scalar::weighted_moments(w, x, n);
}

#endif

}  // namespace ismeta::kernels::avx2
