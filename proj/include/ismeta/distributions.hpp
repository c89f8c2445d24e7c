#pragma once

// Scalar distributions over the social preference β.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ismeta/random.hpp"

namespace ismeta {

struct Uniform {
    double lo = 0.0;
    double hi = 1.0;
};

struct Gaussian {
    double mu = 0.0;
    double sigma = 1.0;
};

struct Mixture {
    std::vector<double> means;
    std::vector<double> sigmas;
    std::vector<double> weights;
};

struct Kde {
    std::vector<double> samples;
    double bandwidth = 1.0;
};

/// Immutable after construction; the factories reject invalid parameters so
/// evaluation never has to.
class ScenarioDistribution {
public:
    using Variant = std::variant<Uniform, Gaussian, Mixture, Kde>;

    static ScenarioDistribution uniform(double lo, double hi);
    static ScenarioDistribution gaussian(double mu, double sigma);
    static ScenarioDistribution mixture(std::vector<double> means, std::vector<double> sigmas,
                                        std::vector<double> weights);
    static ScenarioDistribution kde(std::vector<double> samples, double bandwidth);

    double density(double beta) const;
    double log_density(double beta) const;
    double sample(Rng& rng) const;
    void density_batch(std::span<const double> betas, std::span<double> out) const;

    /// Largest component scale (σ, bandwidth, or 0 for Uniform).
    double max_scale() const;
    /// Interval holding all but a negligible tail of the mass: the support
    /// padded by `pad` times max_scale().
    std::pair<double, double> padded_support(double pad = 10.0) const;

    /// Re-parseable literal, e.g. "gaussian(1.5,0.5)". KDE literals inline
    /// their samples.
    std::string literal() const;
    /// Short human label in table notation, e.g. "N(1.5, 0.5^2)", "GMM", "KDE".
    std::string label() const;

    const Variant& params() const noexcept { return v_; }
    bool operator==(const ScenarioDistribution& other) const;

private:
    explicit ScenarioDistribution(Variant v);

    Variant v_;
    // Mixture/KDE evaluation caches.
    std::vector<double> inv_scales_;
    std::vector<double> coefs_;
    std::vector<double> cumulative_;
};

double density(const ScenarioDistribution& dist, double beta);
double sample(const ScenarioDistribution& dist, Rng& rng);

/// min(p_num(β) / p_den(β), cap). Throws SupportError when p_den(β) = 0.
/// Identical distributions give exactly 1.
double likelihood_ratio(const ScenarioDistribution& numerator, const ScenarioDistribution& denominator,
                        double beta, std::optional<double> cap = std::nullopt);

/// True when `proposal` puts positive density wherever `target` has
/// non-negligible mass (its support padded by 10 scales).
bool covers_support(const ScenarioDistribution& proposal, const ScenarioDistribution& target);

/// Gaussian-kernel KDE; bandwidth defaults to Silverman's 1.06·sd·n^(-1/5).
ScenarioDistribution fit_kde(std::span<const double> samples, std::optional<double> bandwidth = std::nullopt);

double silverman_bandwidth(std::span<const double> samples);

/// Mixture with a shared σ; equal weights 1/k when `weights` is empty.
ScenarioDistribution make_gmm(std::span<const double> means, double sigma, std::span<const double> weights = {});

/// Parses uniform(lo,hi), gaussian(mu,sigma), gmm([m..],sigma,equal|[w..]),
/// mixture([m..],[s..],[w..]), kde(path|[x..], auto|bw). Relative KDE paths
/// resolve against `base_dir`. Throws ConfigError on malformed input.
ScenarioDistribution parse_distribution(std::string_view literal, const std::filesystem::path& base_dir = {});

/// Reads a one-column list of β values, or the `beta`/`beta_hat` column of a
/// headed CSV.
std::vector<double> read_beta_csv(const std::filesystem::path& path);

}  // namespace ismeta
