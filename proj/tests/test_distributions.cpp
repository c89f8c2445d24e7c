#include "doctest.h"

#include <boost/math/distributions/chi_squared.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "ismeta/distributions.hpp"
#include "ismeta/errors.hpp"
#include "oracles.hpp"

using namespace ismeta;
using doctest::Approx;

namespace {

std::vector<ScenarioDistribution> all_types() {
    return {ScenarioDistribution::uniform(-1, 3), ScenarioDistribution::gaussian(1.5, 0.5),
            make_gmm(std::vector<double>{-0.5, 1.0, 2.5}, 0.4, std::vector<double>{0.2, 0.5, 0.3}),
            ScenarioDistribution::kde({-0.3, 0.1, 0.4, 1.9, 2.0}, 0.3)};
}

}  // namespace

TEST_CASE("density examples") {
    CHECK(density(ScenarioDistribution::uniform(-1, 3), 0.0) == Approx(0.25).epsilon(1e-15));
    CHECK(density(ScenarioDistribution::uniform(-1, 3), 3.5) == 0.0);
    CHECK(density(ScenarioDistribution::gaussian(1.5, 0.5), 1.5) == Approx(oracle::normal_pdf(1.5, 1.5, 0.5)).epsilon(1e-12));
    CHECK(density(ScenarioDistribution::gaussian(1.5, 0.5), 1.5) == Approx(0.7978845608).epsilon(1e-10));
    const auto mix = ScenarioDistribution::mixture({0, 0}, {1, 1}, {0.5, 0.5});
    CHECK(density(mix, 0.0) == Approx(oracle::normal_pdf(0.0)).epsilon(1e-12));
}

TEST_CASE("construction rejects invalid parameters") {
    CHECK_THROWS_AS(ScenarioDistribution::uniform(1, 1), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::gaussian(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::gaussian(0, -1), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::mixture({0, 1}, {1, 1}, {0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::mixture({0, 1}, {1, 1}, {1.5, -0.5}), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::mixture({0, 1}, {1, 0}, {0.5, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(ScenarioDistribution::kde({0, 1}, 0.0), std::invalid_argument);
}

TEST_CASE("sampling moments and determinism") {
    Rng rng = make_rng(42);
    const auto u = ScenarioDistribution::uniform(-1, 3);
    double sum = 0;
    for (int i = 0; i < 100000; ++i) sum += u.sample(rng);
    CHECK(std::abs(sum / 1e5 - 1.0) < 0.02);

    const auto g = ScenarioDistribution::gaussian(1.5, 0.5);
    double s1 = 0, s2 = 0;
    for (int i = 0; i < 100000; ++i) {
        const double x = g.sample(rng);
        s1 += x;
        s2 += x * x;
    }
    const double sd = std::sqrt(s2 / 1e5 - (s1 / 1e5) * (s1 / 1e5));
    CHECK(std::abs(sd - 0.5) < 0.01);

    for (const auto& d : all_types()) {
        Rng a = make_rng(7), b = make_rng(7);
        for (int i = 0; i < 100; ++i) CHECK(d.sample(a) == d.sample(b));
    }
}

TEST_CASE("quadrature mass over padded support") {
    for (const auto& d : all_types()) {
        CAPTURE(d.literal());
        // The Uniform's jumps are integrated exactly by splitting at them.
        double mass = 0;
        if (const auto* u = std::get_if<Uniform>(&d.params())) {
            mass = oracle::simpson([&](double x) { return d.density(x); }, u->lo, u->hi, 2000);
        } else {
            mass = oracle::simpson([&](double x) { return d.density(x); }, -11.0, 13.0, 200000);
        }
        CHECK(mass == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("chi-square goodness of fit at the 0.001 level") {
    for (const auto& d : all_types()) {
        CAPTURE(d.literal());
        const auto [lo, hi] = d.padded_support(4.0);
        const int bins = 40;
        const double width = (hi - lo) / bins;
        std::vector<double> expected(bins + 2, 0.0);
        for (int b = 0; b < bins; ++b)
            expected[b + 1] = oracle::simpson([&](double x) { return d.density(x); }, lo + b * width, lo + (b + 1) * width, 200);
        double inner = 0;
        for (double e : expected) inner += e;
        expected[0] = expected[bins + 1] = std::max(0.0, (1.0 - inner) / 2.0);

        const int n = 100000;
        std::vector<double> observed(bins + 2, 0.0);
        Rng rng = make_rng(2024);
        for (int i = 0; i < n; ++i) {
            const double x = d.sample(rng);
            const int b = x < lo ? 0 : x >= hi ? bins + 1 : 1 + std::min(bins - 1, static_cast<int>((x - lo) / width));
            observed[b] += 1;
        }
        // Pool cells with expected count below 5 into their neighbor.
        double stat = 0, pooled_e = 0, pooled_o = 0;
        int dof = -1;
        for (int b = 0; b < bins + 2; ++b) {
            pooled_e += expected[b] * n;
            pooled_o += observed[b];
            if (pooled_e >= 5.0) {
                stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / pooled_e;
                ++dof;
                pooled_e = pooled_o = 0;
            }
        }
        if (pooled_e > 0) stat += (pooled_o - pooled_e) * (pooled_o - pooled_e) / std::max(pooled_e, 1e-12);
        const double crit = boost::math::quantile(boost::math::complement(boost::math::chi_squared(dof), 0.001));
        CHECK(stat < crit);
    }
}

TEST_CASE("likelihood ratio examples") {
    const auto p = ScenarioDistribution::gaussian(1.5, 0.5);
    const auto q = ScenarioDistribution::gaussian(0.5, 0.5);
    CHECK(likelihood_ratio(p, p, 0.3) == 1.0);
    CHECK(likelihood_ratio(p, q, 1.0) == Approx(oracle::gaussian_ratio(1.0, 1.5, 0.5, 0.5)).epsilon(1e-12));
    CHECK(likelihood_ratio(p, q, 1.0) == Approx(1.0).epsilon(1e-12));
    CHECK(likelihood_ratio(p, q, 1.5) == Approx(oracle::gaussian_ratio(1.5, 1.5, 0.5, 0.5)).epsilon(1e-12));
    CHECK(likelihood_ratio(p, q, 1.5) == Approx(7.3890560989).epsilon(1e-10));
    CHECK(likelihood_ratio(p, q, 1.5, 5.0) == 5.0);
    for (const auto& d : all_types())
        for (double b : {-0.5, 0.0, 1.2, 2.9}) CHECK(likelihood_ratio(d, d, b) == 1.0);
}

TEST_CASE("likelihood ratio support violation") {
    const auto u = ScenarioDistribution::uniform(-1, 3);
    const auto g = ScenarioDistribution::gaussian(1.5, 0.5);
    CHECK_THROWS_AS(likelihood_ratio(g, u, 3.5), SupportError);
    // A proposal wider than the target is legal: the ratio is 0.
    CHECK(likelihood_ratio(u, g, 3.5) == 0.0);
    CHECK_FALSE(covers_support(u, g));
    CHECK(covers_support(g, u));
    CHECK(covers_support(ScenarioDistribution::uniform(-5, 5), ScenarioDistribution::uniform(-1, 3)));
}

TEST_CASE("likelihood ratio reciprocity") {
    const auto ds = all_types();
    for (const auto& p : ds)
        for (const auto& q : ds)
            for (double b : {-0.4, 0.2, 1.1, 2.2}) {
                if (p.density(b) <= 0 || q.density(b) <= 0) continue;
                CHECK(likelihood_ratio(p, q, b) * likelihood_ratio(q, p, b) == Approx(1.0).epsilon(1e-14));
            }
}

TEST_CASE("ratio has unit expectation under the proposal") {
    const auto ds = all_types();
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = 0; j < ds.size(); ++j) {
            const auto& p = ds[i];
            const auto& q = ds[j];
            if (!covers_support(q, p)) continue;
            CAPTURE(p.literal());
            CAPTURE(q.literal());
            Rng rng = make_rng(100 + i * 7 + j);
            const int n = 200000;
            double s = 0, s2 = 0;
            for (int k = 0; k < n; ++k) {
                const double w = likelihood_ratio(p, q, q.sample(rng));
                s += w;
                s2 += w * w;
            }
            const double mean = s / n;
            const double se = std::sqrt((s2 / n - mean * mean) / n);
            CHECK(std::abs(mean - 1.0) <= 3.0 * se + 1e-12);
        }
}

TEST_CASE("fit_kde") {
    CHECK_THROWS_WITH_AS(fit_kde(std::vector<double>{0, 0, 0, 0}), doctest::Contains("degenerate sample set"),
                         std::invalid_argument);
    CHECK_THROWS(fit_kde(std::vector<double>{1.0}));
    const auto two = fit_kde(std::vector<double>{-1, 1}, 1.0);
    CHECK(two.density(0.0) == Approx(0.5 * (oracle::normal_pdf(1) + oracle::normal_pdf(-1))).epsilon(1e-12));
    CHECK(two.density(0.0) == Approx(0.2419707245).epsilon(1e-9));

    Rng rng = make_rng(5);
    std::normal_distribution<double> n(1.8, 0.192);
    std::vector<double> xs(10000);
    for (auto& x : xs) x = n(rng);
    const auto kde = fit_kde(xs);
    const double target = oracle::normal_pdf(1.8, 1.8, 0.192);
    CHECK(target == Approx(2.0779).epsilon(1e-4));
    CHECK(std::abs(kde.density(1.8) / target - 1.0) < 0.10);

    double m = 0, ss = 0;
    for (double x : xs) m += x;
    m /= xs.size();
    for (double x : xs) ss += (x - m) * (x - m);
    const double sd = std::sqrt(ss / (xs.size() - 1));
    CHECK(silverman_bandwidth(xs) == Approx(1.06 * sd * std::pow(10000.0, -0.2)).epsilon(1e-12));
}

TEST_CASE("make_gmm") {
    const auto one = make_gmm(std::vector<double>{2.0}, 0.5);
    const auto g = ScenarioDistribution::gaussian(2.0, 0.5);
    for (double b = -1; b <= 5; b += 0.25) CHECK(one.density(b) == Approx(g.density(b)).epsilon(1e-14));
    const auto three = make_gmm(std::vector<double>{1, 2, 3}, 0.5);
    const auto& m = std::get<Mixture>(three.params());
    REQUIRE(m.weights.size() == 3);
    for (double w : m.weights) CHECK(w == 1.0 / 3.0);
    const auto sym = make_gmm(std::vector<double>{0, 2}, 1.0);
    CHECK(sym.density(1.0) == Approx(oracle::normal_pdf(1.0)).epsilon(1e-12));
    CHECK_THROWS(make_gmm(std::vector<double>{}, 0.5));
    CHECK_THROWS(make_gmm(std::vector<double>{0, 1}, 0.5, std::vector<double>{1.0}));
}

TEST_CASE("literals parse and round-trip") {
    for (const auto& d : all_types()) CHECK(parse_distribution(d.literal()) == d);
    CHECK(parse_distribution("uniform(-1,3)") == ScenarioDistribution::uniform(-1, 3));
    CHECK(parse_distribution(" gaussian( 1.5 , 0.5 ) ") == ScenarioDistribution::gaussian(1.5, 0.5));
    CHECK(parse_distribution("gmm([1,2,3],0.5,equal)") == make_gmm(std::vector<double>{1, 2, 3}, 0.5));
    CHECK_THROWS_AS(parse_distribution("gaussian(1.5)"), ConfigError);
    CHECK_THROWS_AS(parse_distribution("cauchy(0,1)"), ConfigError);
    CHECK_THROWS_AS(parse_distribution("uniform(3,-1)"), ConfigError);

    const auto dir = std::filesystem::temp_directory_path() / "ismeta_kde_literal";
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "betas.csv");
        f << "vehicle_id,beta_hat,confidence\nA,-1,ok\nB,1,ok\n";
    }
    const auto kde = parse_distribution("kde(betas.csv, 1)", dir);
    CHECK(kde.density(0.0) == Approx(0.2419707245).epsilon(1e-9));
    CHECK_THROWS(parse_distribution("kde(missing.csv, auto)", dir));
    std::filesystem::remove_all(dir);
}
