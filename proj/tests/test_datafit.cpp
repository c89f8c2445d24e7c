#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "fixtures.hpp"
#include "ismeta/datafit.hpp"
#include "ismeta/errors.hpp"
#include "oracles.hpp"

using namespace ismeta;
using doctest::Approx;

namespace {

const Simulator& sim() { return fixture::simulator(); }
const SoftmaxPolicy& meta() { return fixture::stage().meta; }

/// Meta-policy with random state weights and zero β weights.
SoftmaxPolicy beta_blind_meta() {
    const auto map = meta().features();
    std::vector<double> theta(map.dimension(), 0.0);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0, 1);
    for (std::size_t i = 0; i < map.state_count() * map.action_count(); ++i) theta[i] = n(rng);
    return SoftmaxPolicy(map, theta);
}

std::vector<Trajectory> rollout_trajectories(double beta, int episodes, std::uint64_t seed) {
    std::vector<Trajectory> out;
    const EgoDriver ego{fixture::synthetic().pipeline.social.opponent};
    for (int e = 0; e < episodes; ++e) {
        const auto ep = rollout(sim(), ego, meta(), std::vector<double>(2, beta), derive_seed(seed, "traj", e), 0.99);
        auto t = trajectories_from_episode(sim(), meta().features(), ep, "ep" + std::to_string(e));
        out.push_back(std::move(t.front()));
    }
    return out;
}

}  // namespace

TEST_CASE("parsing trajectory files") {
    const auto& map = meta().features();
    CHECK(parse_trajectories("vehicle_id,step,s,v,action_index\n", sim(), map).empty());

    const char* two = "vehicle_id,step,s,v,action_index\n"
                      "b,1,3.0,2.0,1\n"
                      "a,0,0.0,1.0,2\n"
                      "b,0,1.0,2.0,0\n"
                      "a,1,1.5,1.2,3\n";
    const auto t = parse_trajectories(two, sim(), map, {',', "unit"});
    REQUIRE(t.size() == 2u);
    CHECK(t[0].vehicle_id == "b");
    CHECK(t[1].vehicle_id == "a");
    CHECK(t[0].steps[0].step == 0);
    CHECK(t[0].steps[1].step == 1);
    CHECK(t[0].steps[0].action == 0u);
    CHECK(t[1].steps[1].action == 3u);
    CHECK(t[0].source == "unit");
    CHECK(std::isinf(t[0].steps[0].ego_gap));

    const char* bad_action = "vehicle_id,step,s,v,action_index\n"
                             "a,0,0.0,1.0,2\n"
                             "a,1,1.5,1.2,9\n";
    CHECK_THROWS_WITH_AS(parse_trajectories(bad_action, sim(), map), doctest::Contains("line 3"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_trajectories("vehicle_id,step,s,v,action_index\na,0,x,1,0\n", sim(), map),
                         doctest::Contains("line 2"), ConfigError);
    CHECK_THROWS_AS(parse_trajectories("vehicle_id,step,s,v,action_index\na,0,1,1\n", sim(), map), ConfigError);
    CHECK_THROWS_AS(parse_trajectories("vehicle_id,step,s,action_index\n", sim(), map), ConfigError);
    CHECK_THROWS_AS(parse_trajectories("vehicle_id,step,s,v,action_index\na,0,1,1,0\na,0,2,1,0\n", sim(), map),
                    ConfigError);
    CHECK_THROWS_AS(parse_trajectories("vehicle_id,step,s,v,action_index,ego_gap\na,0,1,1,0,2\n", sim(), map),
                    ConfigError);
}

TEST_CASE("ingesting from disk") {
    const auto dir = fixture::scratch_dir("datafit");
    CHECK_THROWS_AS(ingest_trajectories(dir / "none.csv", sim(), meta().features()), MissingArtifactError);
    {
        std::ofstream(dir / "bad.csv") << "vehicle_id,step,s,v,action_index\na,0,1,1,7\n";
    }
    CHECK_THROWS_WITH_AS(ingest_trajectories(dir / "bad.csv", sim(), meta().features()),
                         doctest::Contains("bad.csv: line 2"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("episode trajectories survive a CSV round trip") {
    const auto trajs = rollout_trajectories(1.0, 3, 5);
    const auto csv = trajectories_csv(trajs);
    const auto back = parse_trajectories(csv, sim(), meta().features());
    REQUIRE(back.size() == trajs.size());
    for (std::size_t i = 0; i < trajs.size(); ++i) {
        REQUIRE(back[i].steps.size() == trajs[i].steps.size());
        for (std::size_t k = 0; k < trajs[i].steps.size(); ++k) {
            CHECK(back[i].steps[k].obs == trajs[i].steps[k].obs);
            CHECK(back[i].steps[k].action == trajs[i].steps[k].action);
        }
    }
}

TEST_CASE("beta grid") {
    const auto g = default_beta_grid();
    REQUIRE(g.size() == 51u);
    CHECK(g.front() == -1.5);
    CHECK(g.back() == 3.5);
    CHECK(g[25] == Approx(1.0).epsilon(1e-15));
}

TEST_CASE("estimation from aggregated rollouts") {
    Trajectory all;
    for (const auto& t : rollout_trajectories(1.0, 10, 11))
        all.steps.insert(all.steps.end(), t.steps.begin(), t.steps.end());
    REQUIRE(all.steps.size() >= 200u);
    const auto est = estimate_beta(all, meta(), default_beta_grid());
    CHECK(std::abs(est.beta_hat - 1.0) <= 0.25);
    CHECK(!est.low_confidence);
    CHECK(est.log_likelihood.size() == est.grid.size());
}

TEST_CASE("likelihood is a sum over steps") {
    auto t = rollout_trajectories(2.0, 1, 21).front();
    const auto grid = default_beta_grid();
    const auto a = estimate_beta(t, meta(), grid);
    std::mt19937_64 rng(3);
    std::shuffle(t.steps.begin(), t.steps.end(), rng);
    const auto b = estimate_beta(t, meta(), grid);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(b.log_likelihood[i] == Approx(a.log_likelihood[i]).epsilon(1e-12));
    CHECK(a.beta_hat == b.beta_hat);

    // Direct sum of log-probabilities at one grid point.
    double direct = 0.0;
    std::vector<double> lp(meta().action_count());
    for (const auto& st : t.steps) {
        meta().log_probs(Observation{st.obs.state, grid[7]}, lp);
        direct += lp[st.action];
    }
    CHECK(a.log_likelihood[7] == Approx(direct).epsilon(1e-12));
}

TEST_CASE("degenerate likelihood curves") {
    const auto blind = beta_blind_meta();
    const auto t = rollout_trajectories(0.0, 1, 31).front();
    const auto flat = estimate_beta(t, blind, default_beta_grid());
    CHECK(flat.beta_hat == Approx(1.0).epsilon(1e-15));
    CHECK(flat.low_confidence);

    Trajectory one;
    one.vehicle_id = "solo";
    one.steps.push_back(t.steps.front());
    const auto single = estimate_beta(one, meta(), default_beta_grid());
    const auto [lo, hi] = std::minmax_element(single.log_likelihood.begin(), single.log_likelihood.end());
    CHECK(single.low_confidence == (*hi - *lo < 0.5));
    one.steps.front() = t.steps.back();
    const auto blind_single = estimate_beta(one, blind, default_beta_grid());
    CHECK(blind_single.low_confidence);

    CHECK_THROWS_AS(estimate_beta(Trajectory{}, meta(), default_beta_grid()), std::invalid_argument);
    const std::vector<double> unsorted{1.0, 0.0};
    CHECK_THROWS_AS(estimate_beta(t, meta(), unsorted), std::invalid_argument);
}

TEST_CASE("recovering beta from generated trajectories") {
    std::vector<double> errors;
    for (double beta : {-1.0, 0.0, 1.0, 2.0, 3.0})
        for (const auto& t : rollout_trajectories(beta, 20, 1000 + static_cast<std::uint64_t>(beta + 1)))
            errors.push_back(std::abs(estimate_beta(t, meta(), default_beta_grid()).beta_hat - beta));
    std::sort(errors.begin(), errors.end());
    const double median = 0.5 * (errors[49] + errors[50]);
    INFO("median error " << median);
    CHECK(median <= 0.3);
}

TEST_CASE("naturalistic fit") {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(1.8, 0.192);
    std::vector<double> betas(500);
    for (auto& b : betas) b = n(rng);
    const auto fit = fit_naturalistic(betas);
    const double mean = std::accumulate(betas.begin(), betas.end(), 0.0) / 500.0;
    double ss = 0.0;
    for (double b : betas) ss += (b - mean) * (b - mean);
    const double sd = std::sqrt(ss / 499.0);
    CHECK(fit.mean == Approx(mean).epsilon(1e-12));
    CHECK(fit.sd == Approx(sd).epsilon(1e-12));
    CHECK(std::abs(fit.mean - 1.8) <= 0.03);
    CHECK(std::abs(fit.sd - 0.192) <= 0.02);
    CHECK(fit.gaussian == ScenarioDistribution::gaussian(fit.mean, fit.sd));

    const std::vector<double> two{-1.0, 1.0};
    const auto f2 = fit_naturalistic(two, 1.0);
    CHECK(f2.kde.density(0.0) == Approx(0.2419707245).epsilon(1e-9));
    CHECK(f2.kde.density(0.0) == Approx(oracle::normal_pdf(1.0)).epsilon(1e-12));

    const std::vector<double> one{1.0};
    CHECK_THROWS(fit_naturalistic(one));
    const auto json = naturalistic_json(fit);
    CHECK(json.find("kde(") != std::string::npos);
}

TEST_CASE("betas csv") {
    const auto trajs = rollout_trajectories(1.0, 2, 41);
    std::vector<BetaEstimate> est;
    for (const auto& t : trajs) est.push_back(estimate_beta(t, meta(), default_beta_grid()));
    const auto csv = betas_csv(trajs, est);
    CHECK(csv.rfind("vehicle_id,beta_hat,confidence\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK_THROWS(betas_csv(trajs, std::span<const BetaEstimate>(est.data(), 1)));
}
