#pragma once

// Closed-form reference values used by the tests. Nothing here calls into
// the library.

#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline double normal_pdf(double x, double mu = 0.0, double sigma = 1.0) {
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_cdf(double x, double mu = 0.0, double sigma = 1.0) {
    return 0.5 * std::erfc(-(x - mu) / (sigma * std::numbers::sqrt2));
}

/// N(m1, s²) / N(m0, s²) at x, from the exponent difference.
inline double gaussian_ratio(double x, double m1, double m0, double s) {
    return std::exp(((x - m0) * (x - m0) - (x - m1) * (x - m1)) / (2.0 * s * s));
}

inline double kl_discrete(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
    return acc;
}

inline std::vector<double> softmax(const std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    std::vector<double> p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
    for (double& v : p) v /= s;
    return p;
}

/// Composite Simpson rule on [a, b] with n (even) panels.
template <class F>
double simpson(F&& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace oracle
