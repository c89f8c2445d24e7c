#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fixtures.hpp"
#include "ismeta/ce_eval.hpp"
#include "ismeta/errors.hpp"
#include "oracles.hpp"

using namespace ismeta;
using doctest::Approx;

namespace {

/// Textbook CE on a deterministic reward, independent of the library.
double reference_ce(double (*reward)(double), double mu, double sigma, int n, double q, double tol, int max_it) {
    std::mt19937_64 rng(12345);
    std::vector<std::pair<double, double>> draws(static_cast<std::size_t>(n));
    for (int it = 0; it < max_it; ++it) {
        std::normal_distribution<double> normal(mu, sigma);
        for (auto& d : draws) {
            d.second = normal(rng);
            d.first = reward(d.second);
        }
        std::sort(draws.begin(), draws.end());
        const auto k = static_cast<std::size_t>(std::ceil(q * n));
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += draws[i].second;
        const double next = sum / static_cast<double>(k);
        const bool done = std::abs(next - mu) < tol;
        mu = next;
        if (done) break;
    }
    return mu;
}

double dist_to_two(double b) { return std::abs(b - 2.0); }

OutcomeSampler indicator(bool (*fails)(double)) {
    return [fails](double beta, std::uint64_t) { return fails(beta) ? Outcome::Collision : Outcome::Success; };
}

bool negative(double b) { return b < 0.0; }
bool in_band(double b) { return b > 0.5 && b < 1.0; }
bool always(double) { return true; }

}  // namespace

TEST_CASE("CE config validation") {
    CeConfig c;
    CHECK_NOTHROW(c.validate());
    c.threshold = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = CeConfig{};
    c.elite_quantile = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = CeConfig{};
    c.sigma = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = CeConfig{};
    c.n_samples = 5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("CE finds the minimizer of a deterministic reward") {
    CeConfig c;
    c.mu0 = 0.0;
    c.sigma = 0.5;
    c.seed = 3;
    const auto r = ce_optimize([](double b, std::uint64_t) { return dist_to_two(b); }, c);
    CHECK(r.converged);
    CHECK(r.trace.size() <= 50u);
    CHECK(r.mu >= 1.9);
    CHECK(r.mu <= 2.1);
    CHECK(r.trace.front().mu == 0.0);
    for (const auto& row : r.trace) CHECK(row.elite_count == 50u);

    const double ref = reference_ce(dist_to_two, 0.0, 0.5, 100000, 0.1, 0.01, 50);
    CHECK(ref == Approx(2.0).epsilon(0.01));
    CHECK(std::abs(r.mu - ref) < 0.1);

    // Each iteration's elites sit closer to the target until the mean settles.
    for (std::size_t i = 1; i < r.trace.size(); ++i)
        CHECK(r.trace[i].elite_mean_reward <= r.trace[i - 1].elite_mean_reward + 0.05);
    CHECK(r.trace.back().elite_mean_reward < r.trace.front().elite_mean_reward);
}

TEST_CASE("CE with a constant reward keeps every sample and barely drifts") {
    CeConfig c;
    c.mu0 = 0.7;
    c.seed = 8;
    c.max_iterations = 10;
    const auto r = ce_optimize([](double, std::uint64_t) { return 1.0; }, c);
    for (const auto& row : r.trace) CHECK(row.elite_count == 500u);
    // Each step moves by one sample mean of N(0, σ²/n).
    const double step_sd = c.sigma / std::sqrt(500.0);
    CHECK(std::abs(r.mu - c.mu0) < 5.0 * step_sd * std::sqrt(static_cast<double>(r.trace.size())));
}

TEST_CASE("CE is deterministic and reports its trace") {
    CeConfig c;
    c.seed = 21;
    c.repeats = 2;
    c.jobs = 2;
    const auto f = [](double b, std::uint64_t s) { return dist_to_two(b) + 1e-3 * static_cast<double>(s % 7); };
    const auto a = ce_optimize(f, c);
    c.jobs = 1;
    const auto b = ce_optimize(f, c);
    CHECK(a.mu == b.mu);
    CHECK(a.trace.size() == b.trace.size());
    const auto csv = ce_trace_csv(a);
    CHECK(csv.rfind("iteration,mu,next_mu,elite_mean_reward,elite_threshold,elite_count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(a.trace.size() + 1));
}

TEST_CASE("CE on the driving reward from the trained fixture") {
    const auto& sim = fixture::simulator();
    const SoftmaxPolicy ego(FeatureMap::ego(sim.action_count()));
    CeConfig c;
    c.n_samples = 40;
    c.max_iterations = 3;
    c.seed = 5;
    const auto sampler = episode_reward_sampler(sim, ego, fixture::stage().meta, 0.99);
    const auto a = ce_optimize(sampler, c);
    const auto b = ce_optimize(sampler, c);
    CHECK(a.mu == b.mu);
    CHECK(std::isfinite(a.mu));
}

TEST_CASE("IS estimate of a rare failure") {
    const auto p_nat = ScenarioDistribution::gaussian(1.5, 0.5);
    const auto proposal = ScenarioDistribution::gaussian(0.0, 0.5);
    const double truth = oracle::normal_cdf(-3.0);
    CHECK(truth == Approx(1.3499e-3).epsilon(1e-4));
    std::vector<double> est;
    for (std::uint64_t s = 0; s < 10; ++s) est.push_back(evaluate_is(indicator(negative), proposal, p_nat, 5000, s).failure.mean);
    std::nth_element(est.begin(), est.begin() + 5, est.end());
    const double median = 0.5 * (est[5] + *std::max_element(est.begin(), est.begin() + 5));
    CHECK(std::abs(median - truth) <= 0.2 * truth);
}

TEST_CASE("IS estimates are unbiased across seeds") {
    const auto p_nat = ScenarioDistribution::gaussian(1.5, 0.5);
    struct Case {
        bool (*fails)(double);
        double truth;
        ScenarioDistribution proposal;
    };
    const std::vector<Case> cases{
        {negative, oracle::normal_cdf(-3.0), ScenarioDistribution::gaussian(0.0, 0.5)},
        {in_band, oracle::normal_cdf(-1.0) - oracle::normal_cdf(-2.0), ScenarioDistribution::gaussian(0.5, 0.75)},
        {always, 1.0, ScenarioDistribution::gaussian(1.0, 1.0)},
    };
    for (const auto& c : cases) {
        std::vector<double> est;
        for (std::uint64_t s = 0; s < 100; ++s)
            est.push_back(evaluate_is(indicator(c.fails), c.proposal, p_nat, 2000, 1000 + s).failure.mean);
        const double mean = std::accumulate(est.begin(), est.end(), 0.0) / est.size();
        double var = 0.0;
        for (double e : est) var += (e - mean) * (e - mean);
        const double se = std::sqrt(var / (est.size() - 1) / est.size());
        INFO("truth " << c.truth << " mean " << mean << " se " << se);
        CHECK(std::abs(mean - c.truth) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("two valid proposals agree") {
    const auto p_nat = ScenarioDistribution::gaussian(1.5, 0.5);
    const auto a = evaluate_is(indicator(negative), ScenarioDistribution::gaussian(0.0, 0.5), p_nat, 5000, 77);
    const auto b = evaluate_is(indicator(negative), ScenarioDistribution::gaussian(0.5, 0.75), p_nat, 5000, 78);
    const double se = std::hypot(a.failure.std, b.failure.std) / std::sqrt(5000.0);
    CHECK(std::abs(a.failure.mean - b.failure.mean) <= 3.0 * se);
}

TEST_CASE("report statistics") {
    const auto p_nat = ScenarioDistribution::gaussian(1.5, 0.5);
    const OutcomeSampler three_way = [](double beta, std::uint64_t seed) {
        if (beta < 1.0) return Outcome::Collision;
        return seed % 4 == 0 ? Outcome::Timeout : Outcome::Success;
    };
    const auto r = evaluate_is(three_way, ScenarioDistribution::gaussian(1.0, 0.7), p_nat, 3000, 4);
    CHECK(r.n == 3000u);
    CHECK(r.raw_success.mean + r.raw_collision.mean + r.raw_timeout.mean == Approx(1.0).epsilon(1e-12));
    for (const auto& s : {r.raw_success, r.raw_collision, r.raw_timeout})
        CHECK(s.std == Approx(std::sqrt(s.mean * (1 - s.mean))).epsilon(1e-9));
    CHECK(r.failure.mean == Approx(r.collision.mean + r.timeout.mean).epsilon(1e-12));
    CHECK(1.0 <= r.ess_max);
    CHECK(r.ess_max <= r.ess_sq + 1e-9);
    CHECK(r.ess_sq <= 3000.0 + 1e-9);
    CHECK(r.max_weight >= r.mean_weight);

    // Proposal equal to the target: unit weights and full sample size.
    const auto same = evaluate_is(three_way, p_nat, p_nat, 1000, 4);
    CHECK(same.mean_weight == 1.0);
    CHECK(same.ess_max == 1000.0);
    CHECK(same.ess_sq == Approx(1000.0).epsilon(1e-12));
    CHECK(same.success.mean == same.raw_success.mean);
    CHECK(same.success.std == Approx(same.raw_success.std).epsilon(1e-12));
}

TEST_CASE("evaluation rejects proposals that miss the naturalistic support") {
    const auto p_nat = ScenarioDistribution::gaussian(1.5, 0.5);
    CHECK_THROWS_AS(evaluate_is(indicator(negative), ScenarioDistribution::uniform(-1, 3), p_nat, 100, 1), SupportError);
    CHECK_THROWS_AS(evaluate_is(indicator(negative), p_nat, p_nat, 0, 1), std::invalid_argument);
    CHECK_NOTHROW(evaluate_is(indicator(negative), ScenarioDistribution::uniform(-10, 10), p_nat, 100, 1));
}

TEST_CASE("rollout evaluation is deterministic and keeps episodes") {
    const auto& sim = fixture::simulator();
    const SoftmaxPolicy ego(FeatureMap::ego(sim.action_count()));
    const auto p = ScenarioDistribution::gaussian(1.5, 0.5);
    std::vector<EpisodeRecord> kept;
    const auto a = evaluate_is(sim, ego, fixture::stage().meta, p, p, 200, 9, 2, 5, &kept);
    const auto b = evaluate_is(sim, ego, fixture::stage().meta, p, p, 200, 9, 1);
    CHECK(kept.size() == 5u);
    CHECK(a.success.mean == b.success.mean);
    CHECK(a.collision.mean == b.collision.mean);
    CHECK(a.timeout.mean == b.timeout.mean);
}

TEST_CASE("formatting") {
    CHECK(format_rate({0.66, 0.4737}) == "0.660 ± 0.474");
    CHECK(format_rate({1.0, 0.0}) == "1.000 ± 0.000");
    EvalReport r;
    r.label = "CEIS, k=2";
    r.training = "gaussian(0.5,0.5)";
    r.success = {0.5, 0.5};
    const auto row = eval_csv_row(r);
    CHECK(row.rfind("\"CEIS, k=2\",\"gaussian(0.5,0.5)\",0.500 ± 0.500,", 0) == 0);
    CHECK(std::string(kEvalCsvHeader) == "policy,training_distribution,success,collision,timeout");
    const auto j = eval_json(r);
    CHECK(j.find("\"weighted\"") != std::string::npos);
}
