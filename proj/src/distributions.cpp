#include "ismeta/distributions.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ismeta/errors.hpp"
#include "ismeta/io.hpp"
#include "ismeta/kernels.hpp"

namespace ismeta {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;  // 1/√(2π)
constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // ln √(2π)

double normal_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return kInvSqrt2Pi / sigma * std::exp(-0.5 * z * z);
}

double normal_log_pdf(double x, double mu, double sigma) {
    const double z = (x - mu) / sigma;
    return -0.5 * z * z - std::log(sigma) - kLogSqrt2Pi;
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

// log Σ_i exp(a_i), used when the direct density underflows.
double log_sum_exp(std::span<const double> terms) {
    const double m = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    return m + std::log(s);
}

}  // namespace

ScenarioDistribution::ScenarioDistribution(Variant v) : v_(std::move(v)) {
    if (const auto* m = std::get_if<Mixture>(&v_)) {
        inv_scales_.resize(m->means.size());
        coefs_.resize(m->means.size());
        cumulative_.resize(m->means.size());
        double c = 0.0;
        for (std::size_t i = 0; i < m->means.size(); ++i) {
            inv_scales_[i] = 1.0 / m->sigmas[i];
            coefs_[i] = m->weights[i] * kInvSqrt2Pi / m->sigmas[i];
            c += m->weights[i];
            cumulative_[i] = c;
        }
    }
}

ScenarioDistribution ScenarioDistribution::uniform(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi) || !(lo < hi))
        throw std::invalid_argument("uniform: require finite lo < hi");
    return ScenarioDistribution(Uniform{lo, hi});
}

ScenarioDistribution ScenarioDistribution::gaussian(double mu, double sigma) {
    if (!std::isfinite(mu) || !positive_finite(sigma)) throw std::invalid_argument("gaussian: require finite mu, sigma > 0");
    return ScenarioDistribution(Gaussian{mu, sigma});
}

ScenarioDistribution ScenarioDistribution::mixture(std::vector<double> means, std::vector<double> sigmas,
                                                   std::vector<double> weights) {
    if (means.empty()) throw std::invalid_argument("mixture: no components");
    if (sigmas.size() != means.size() || weights.size() != means.size())
        throw std::invalid_argument("mixture: means, sigmas and weights differ in length");
    double total = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
        if (!std::isfinite(means[i])) throw std::invalid_argument("mixture: non-finite mean");
        if (!positive_finite(sigmas[i])) throw std::invalid_argument("mixture: sigma must be > 0");
        if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
            throw std::invalid_argument("mixture: weights must be nonnegative");
        total += weights[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights must sum to 1");
    return ScenarioDistribution(Mixture{std::move(means), std::move(sigmas), std::move(weights)});
}

ScenarioDistribution ScenarioDistribution::kde(std::vector<double> samples, double bandwidth) {
    if (samples.empty()) throw std::invalid_argument("kde: no samples");
    if (!positive_finite(bandwidth)) throw std::invalid_argument("kde: bandwidth must be > 0");
    for (double s : samples)
        if (!std::isfinite(s)) throw std::invalid_argument("kde: non-finite sample");
    return ScenarioDistribution(Kde{std::move(samples), bandwidth});
}

double ScenarioDistribution::density(double beta) const {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) {
                return (beta >= d.lo && beta <= d.hi) ? 1.0 / (d.hi - d.lo) : 0.0;
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return normal_pdf(beta, d.mu, d.sigma);
            } else if constexpr (std::is_same_v<T, Mixture>) {
                return kernels::gaussian_mixture_sum(d.means, inv_scales_, coefs_, beta);
            } else {
                const double n = static_cast<double>(d.samples.size());
                return kernels::gaussian_kernel_sum(d.samples, 1.0 / d.bandwidth, beta) * kInvSqrt2Pi /
                       (n * d.bandwidth);
            }
        },
        v_);
}

double ScenarioDistribution::log_density(double beta) const {
    constexpr double kFloor = 1e-280;
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) {
                return (beta >= d.lo && beta <= d.hi) ? -std::log(d.hi - d.lo)
                                                      : -std::numeric_limits<double>::infinity();
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return normal_log_pdf(beta, d.mu, d.sigma);
            } else if constexpr (std::is_same_v<T, Mixture>) {
                const double p = density(beta);
                if (p > kFloor) return std::log(p);
                std::vector<double> terms(d.means.size());
                for (std::size_t i = 0; i < terms.size(); ++i)
                    terms[i] = d.weights[i] > 0.0 ? std::log(d.weights[i]) + normal_log_pdf(beta, d.means[i], d.sigmas[i])
                                                  : -std::numeric_limits<double>::infinity();
                return log_sum_exp(terms);
            } else {
                const double p = density(beta);
                if (p > kFloor) return std::log(p);
                std::vector<double> terms(d.samples.size());
                for (std::size_t i = 0; i < terms.size(); ++i) terms[i] = normal_log_pdf(beta, d.samples[i], d.bandwidth);
                return log_sum_exp(terms) - std::log(static_cast<double>(d.samples.size()));
            }
        },
        v_);
}

double ScenarioDistribution::sample(Rng& rng) const {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) {
                return std::uniform_real_distribution<double>(d.lo, d.hi)(rng);
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return std::normal_distribution<double>(d.mu, d.sigma)(rng);
            } else if constexpr (std::is_same_v<T, Mixture>) {
                const double u = uniform01(rng);
                auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
                std::size_t k = static_cast<std::size_t>(it - cumulative_.begin());
                if (k >= d.means.size()) k = d.means.size() - 1;
                return std::normal_distribution<double>(d.means[k], d.sigmas[k])(rng);
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, d.samples.size() - 1);
                const double center = d.samples[pick(rng)];
                return std::normal_distribution<double>(center, d.bandwidth)(rng);
            }
        },
        v_);
}

void ScenarioDistribution::density_batch(std::span<const double> betas, std::span<double> out) const {
    if (betas.size() != out.size()) throw std::invalid_argument("density_batch: length mismatch");
    for (std::size_t i = 0; i < betas.size(); ++i) out[i] = density(betas[i]);
}

double ScenarioDistribution::max_scale() const {
    return std::visit(
        [](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) return 0.0;
            else if constexpr (std::is_same_v<T, Gaussian>) return d.sigma;
            else if constexpr (std::is_same_v<T, Mixture>) return *std::max_element(d.sigmas.begin(), d.sigmas.end());
            else return d.bandwidth;
        },
        v_);
}

std::pair<double, double> ScenarioDistribution::padded_support(double pad) const {
    const double s = max_scale();
    return std::visit(
        [&](const auto& d) -> std::pair<double, double> {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) return {d.lo, d.hi};
            else if constexpr (std::is_same_v<T, Gaussian>) return {d.mu - pad * s, d.mu + pad * s};
            else if constexpr (std::is_same_v<T, Mixture>) {
                auto [lo, hi] = std::minmax_element(d.means.begin(), d.means.end());
                return {*lo - pad * s, *hi + pad * s};
            } else {
                auto [lo, hi] = std::minmax_element(d.samples.begin(), d.samples.end());
                return {*lo - pad * s, *hi + pad * s};
            }
        },
        v_);
}

namespace {

std::string join(const std::vector<double>& xs) {
    std::string out = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += format_double(xs[i]);
    }
    return out + "]";
}

bool all_equal(const std::vector<double>& xs) {
    return std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); });
}

}  // namespace

std::string ScenarioDistribution::literal() const {
    return std::visit(
        [](const auto& d) -> std::string {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) {
                return "uniform(" + format_double(d.lo) + "," + format_double(d.hi) + ")";
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return "gaussian(" + format_double(d.mu) + "," + format_double(d.sigma) + ")";
            } else if constexpr (std::is_same_v<T, Mixture>) {
                if (all_equal(d.sigmas)) {
                    const double k = static_cast<double>(d.means.size());
                    const bool equal = std::all_of(d.weights.begin(), d.weights.end(),
                                                   [&](double w) { return w == 1.0 / k; });
                    return "gmm(" + join(d.means) + "," + format_double(d.sigmas.front()) + "," +
                           (equal ? std::string("equal") : join(d.weights)) + ")";
                }
                return "mixture(" + join(d.means) + "," + join(d.sigmas) + "," + join(d.weights) + ")";
            } else {
                return "kde(" + join(d.samples) + "," + format_double(d.bandwidth) + ")";
            }
        },
        v_);
}

std::string ScenarioDistribution::label() const {
    return std::visit(
        [](const auto& d) -> std::string {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Uniform>) {
                return "U(" + format_double(d.lo) + ", " + format_double(d.hi) + ")";
            } else if constexpr (std::is_same_v<T, Gaussian>) {
                return "N(" + format_double(d.mu) + ", " + format_double(d.sigma) + "^2)";
            } else if constexpr (std::is_same_v<T, Mixture>) {
                if (d.means.size() == 1)
                    return "N(" + format_double(d.means[0]) + ", " + format_double(d.sigmas[0]) + "^2)";
                return "GMM";
            } else {
                return "KDE";
            }
        },
        v_);
}

bool ScenarioDistribution::operator==(const ScenarioDistribution& other) const {
    return std::visit(
        [](const auto& a, const auto& b) -> bool {
            using A = std::decay_t<decltype(a)>;
            using B = std::decay_t<decltype(b)>;
            if constexpr (!std::is_same_v<A, B>) return false;
            else if constexpr (std::is_same_v<A, Uniform>) return a.lo == b.lo && a.hi == b.hi;
            else if constexpr (std::is_same_v<A, Gaussian>) return a.mu == b.mu && a.sigma == b.sigma;
            else if constexpr (std::is_same_v<A, Mixture>)
                return a.means == b.means && a.sigmas == b.sigmas && a.weights == b.weights;
            else return a.samples == b.samples && a.bandwidth == b.bandwidth;
        },
        v_, other.v_);
}

double density(const ScenarioDistribution& dist, double beta) { return dist.density(beta); }

double sample(const ScenarioDistribution& dist, Rng& rng) { return dist.sample(rng); }

double likelihood_ratio(const ScenarioDistribution& numerator, const ScenarioDistribution& denominator, double beta,
                        std::optional<double> cap) {
    if (cap && !(*cap > 0.0)) throw std::invalid_argument("likelihood_ratio: cap must be positive");
    const double log_den = denominator.log_density(beta);
    if (!(log_den > -std::numeric_limits<double>::infinity()))
        throw SupportError("proposal does not cover naturalistic support at β = " + format_double(beta));
    double ratio = 1.0;
    if (!(numerator == denominator)) {
        const double log_num = numerator.log_density(beta);
        ratio = log_num == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(log_num - log_den);
    }
    return cap ? std::min(ratio, *cap) : ratio;
}

double silverman_bandwidth(std::span<const double> samples) {
    if (samples.size() < 2) throw std::invalid_argument("fit_kde: need at least 2 samples");
    const double n = static_cast<double>(samples.size());
    const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : samples) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (!(sd > 0.0)) throw std::invalid_argument("degenerate sample set");
    return 1.06 * sd * std::pow(n, -0.2);
}

bool covers_support(const ScenarioDistribution& proposal, const ScenarioDistribution& target) {
    const auto* u = std::get_if<Uniform>(&proposal.params());
    if (!u) return true;
    const auto [lo, hi] = target.padded_support(10.0);
    return lo >= u->lo && hi <= u->hi;
}

ScenarioDistribution fit_kde(std::span<const double> samples, std::optional<double> bandwidth) {
    if (samples.size() < 2) throw std::invalid_argument("fit_kde: need at least 2 samples");
    const double bw = bandwidth ? *bandwidth : silverman_bandwidth(samples);
    return ScenarioDistribution::kde(std::vector<double>(samples.begin(), samples.end()), bw);
}

ScenarioDistribution make_gmm(std::span<const double> means, double sigma, std::span<const double> weights) {
    if (means.empty()) throw std::invalid_argument("make_gmm: empty means");
    const std::size_t k = means.size();
    std::vector<double> w;
    if (weights.empty()) {
        w.assign(k, 1.0 / static_cast<double>(k));
    } else {
        if (weights.size() != k) throw std::invalid_argument("make_gmm: weights and means differ in length");
        w.assign(weights.begin(), weights.end());
    }
    return ScenarioDistribution::mixture(std::vector<double>(means.begin(), means.end()),
                                         std::vector<double>(k, sigma), std::move(w));
}

// ---------------------------------------------------------------------------
// Literal parsing

namespace {

class LiteralParser {
public:
    LiteralParser(std::string_view text, const std::filesystem::path& base) : s_(text), base_(base) {}

    ScenarioDistribution parse() {
        const std::string name = identifier();
        expect('(');
        ScenarioDistribution d = dispatch(name);
        expect(')');
        skip_ws();
        if (pos_ != s_.size()) fail("trailing characters");
        return d;
    }

private:
    ScenarioDistribution dispatch(const std::string& name) {
        try {
            if (name == "uniform") {
                const double lo = number();
                expect(',');
                return ScenarioDistribution::uniform(lo, number());
            }
            if (name == "gaussian" || name == "normal") {
                const double mu = number();
                expect(',');
                return ScenarioDistribution::gaussian(mu, number());
            }
            if (name == "gmm") {
                const auto means = list();
                expect(',');
                const double sigma = number();
                expect(',');
                skip_ws();
                if (peek() == '[') return make_gmm(means, sigma, list());
                if (identifier() != "equal") fail("expected 'equal' or a weight list");
                return make_gmm(means, sigma);
            }
            if (name == "mixture") {
                auto means = list();
                expect(',');
                auto sigmas = list();
                expect(',');
                return ScenarioDistribution::mixture(std::move(means), std::move(sigmas), list());
            }
            if (name == "kde") {
                skip_ws();
                std::vector<double> samples;
                if (peek() == '[') {
                    samples = list();
                } else {
                    auto path = std::filesystem::path(until(','));
                    if (path.is_relative() && !base_.empty()) path = base_ / path;
                    samples = read_beta_csv(path);
                }
                expect(',');
                skip_ws();
                if (std::isalpha(static_cast<unsigned char>(peek()))) {
                    if (identifier() != "auto") fail("expected 'auto' or a bandwidth");
                    return fit_kde(samples);
                }
                return fit_kde(samples, number());
            }
        } catch (const std::invalid_argument& e) {
            throw ConfigError("invalid distribution '" + std::string(s_) + "': " + e.what());
        }
        fail("unknown distribution '" + name + "'");
    }

    [[noreturn]] void fail(const std::string& why) const {
        throw ConfigError("cannot parse distribution '" + std::string(s_) + "': " + why);
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

    void expect(char c) {
        skip_ws();
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }

    std::string identifier() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
        if (start == pos_) fail("expected a name");
        std::string id(s_.substr(start, pos_ - start));
        std::transform(id.begin(), id.end(), id.begin(), [](unsigned char c) { return std::tolower(c); });
        return id;
    }

    double number() {
        skip_ws();
        double v = 0.0;
        const char* first = s_.data() + pos_;
        const char* last = s_.data() + s_.size();
        if (first != last && *first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc()) fail("expected a number");
        pos_ = static_cast<std::size_t>(ptr - s_.data());
        return v;
    }

    std::vector<double> list() {
        expect('[');
        std::vector<double> out;
        skip_ws();
        if (peek() == ']') {
            ++pos_;
            return out;
        }
        for (;;) {
            out.push_back(number());
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            expect(']');
            return out;
        }
    }

    std::string until(char c) {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && s_[pos_] != c) ++pos_;
        std::string out(s_.substr(start, pos_ - start));
        while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
        return out;
    }

    std::string_view s_;
    std::filesystem::path base_;
    std::size_t pos_ = 0;
};

}  // namespace

ScenarioDistribution parse_distribution(std::string_view literal, const std::filesystem::path& base_dir) {
    return LiteralParser(literal, base_dir).parse();
}

std::vector<double> read_beta_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open β file " + path.string());
    std::vector<double> out;
    std::string line;
    std::size_t column = 0;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = csv_split(line);
        if (first) {
            first = false;
            const auto it = std::find_if(cells.begin(), cells.end(),
                                         [](const std::string& c) { return c == "beta" || c == "beta_hat"; });
            if (it != cells.end()) {
                column = static_cast<std::size_t>(it - cells.begin());
                continue;
            }
        }
        if (column >= cells.size()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": missing β column");
        double v = 0.0;
        const std::string& cell = cells[column];
        auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
        if (ec != std::errc() || ptr != cell.data() + cell.size())
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
        out.push_back(v);
    }
    return out;
}

}  // namespace ismeta
