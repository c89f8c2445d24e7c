#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ismeta/errors.hpp"
#include "ismeta/policies.hpp"
#include "ismeta/rollout.hpp"
#include "ismeta/simulator.hpp"

using namespace ismeta;
using doctest::Approx;

namespace {

ScenarioConfig solo_config() {
    ScenarioConfig c = ScenarioConfig::t_intersection();
    c.n_social = 0;
    return c;
}

// Step at which a vehicle starting at rest and holding +2 m/s² first covers
// `goal`, by direct iteration of v' = min(v + a·dt, v_max), s' = s + v'·dt.
int oracle_goal_step(double goal, double a, double dt, double vmax) {
    double v = 0, s = 0;
    for (int n = 1; n < 10000; ++n) {
        v = std::min(v + a * dt, vmax);
        s += v * dt;
        if (s >= goal - 1e-9) return n;
    }
    return -1;
}

}  // namespace

TEST_CASE("default scenario is valid and has one conflict region") {
    const Simulator sim(ScenarioConfig::t_intersection());
    CHECK(sim.ego_conflict_s() > 0);
    CHECK(sim.social_conflict_s() > 0);
    CHECK(sim.ego_conflict_s() < sim.config().ego_goal);
}

TEST_CASE("config invariants") {
    auto c = ScenarioConfig::t_intersection();
    c.dt = 0;
    CHECK_THROWS(c.validate());
    c = ScenarioConfig::t_intersection();
    c.max_steps = 0;
    CHECK_THROWS(c.validate());
    c = ScenarioConfig::t_intersection();
    c.accel_set.clear();
    CHECK_THROWS(c.validate());
    c = ScenarioConfig::t_intersection();
    c.v_max = 0;
    CHECK_THROWS(c.validate());
    c = ScenarioConfig::t_intersection();
    c.social_path = Polyline({{-80, 50}, {220, 50}});
    CHECK_THROWS(Simulator{c});
}

TEST_CASE("reset") {
    const Simulator solo(solo_config());
    const auto s0 = solo.reset({}, 3);
    CHECK(s0.vehicles.size() == 1);
    CHECK(s0.vehicles[0].v == 0.0);
    CHECK(s0.vehicles[0].s == 0.0);
    CHECK(s0.step == 0);

    auto c = ScenarioConfig::t_intersection();
    c.social_spawn = {{20, 40, 4, 8}};
    const Simulator sim(c);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const auto st = sim.reset(std::vector<double>{1.0, 2.0}, seed);
        for (std::size_t i = 1; i < st.vehicles.size(); ++i) {
            CHECK(st.vehicles[i].s >= 20.0);
            CHECK(st.vehicles[i].s <= 40.0);
        }
    }
    CHECK(sim.reset(std::vector<double>{1.0, 2.0}, 9) == sim.reset(std::vector<double>{1.0, 2.0}, 9));
    CHECK_THROWS_AS(sim.reset(std::vector<double>{1.0}, 9), std::invalid_argument);
}

TEST_CASE("step kinematics") {
    const Simulator solo(solo_config());
    auto st = solo.reset({}, 1);
    const auto r = solo.step(st, solo.brake_action(), {});
    CHECK(r.state.vehicles[0].v == 0.0);
    CHECK(r.state.vehicles[0].s == 0.0);
}

TEST_CASE("scripted full acceleration reaches the goal at the brute-force step") {
    const Simulator solo(solo_config());
    const auto& c = solo.config();
    const int expected = oracle_goal_step(c.ego_goal, 2.0, c.dt, c.v_max);
    // Closed form: s_n = 0.04 n (n + 1) until v_max at n = 25 (s = 26 m), then
    // 2 m per step, so 26 + 2 (n - 25) >= 60 first holds at n = 42.
    CHECK(expected == 42);
    auto st = solo.reset({}, 0);
    int n = 0;
    std::optional<Outcome> outcome;
    while (!outcome) {
        const auto r = solo.step(st, solo.max_accel_action(), {});
        st = r.state;
        outcome = r.outcome;
        ++n;
    }
    CHECK(*outcome == Outcome::Success);
    CHECK(n == expected);
}

TEST_CASE("coincident vehicles collide") {
    const Simulator sim(ScenarioConfig::t_intersection());
    WorldState st = sim.reset(std::vector<double>{1.0, 1.0}, 0);
    st.vehicles[0].s = sim.config().ego_goal - 5.0;
    st.vehicles[0].v = 0;
    const Vec2 p = sim.position(st.vehicles[0]);
    const auto [d, s_social] = sim.config().social_path.project(p);
    REQUIRE(d < 1e-9);
    st.vehicles[1].s = s_social;
    st.vehicles[1].v = 0;
    st.vehicles[2].s = 0;
    CHECK(distance(sim.position(st.vehicles[0]), sim.position(st.vehicles[1])) < 1e-9);
    const std::size_t hold = 2;  // accel 0
    REQUIRE(sim.config().accel_set[hold] == 0.0);
    const auto r = sim.step(st, hold, std::vector<std::size_t>{hold, hold});
    REQUIRE(r.outcome);
    CHECK(*r.outcome == Outcome::Collision);
    CHECK(r.ego_reward == Approx(-2.01));
    CHECK_THROWS_AS(sim.step(r.state, hold, std::vector<std::size_t>{hold, hold}), InvariantError);
}

TEST_CASE("social reward is goal utility plus beta times speed term") {
    const Simulator sim(ScenarioConfig::t_intersection());
    const auto& c = sim.config();
    WorldState st = sim.reset(std::vector<double>{-1.0, 2.0}, 4);
    st.vehicles[1].v = 5.0;
    st.vehicles[2].v = 7.0;
    const auto r = sim.step(st, sim.brake_action(), std::vector<std::size_t>{3, 0});
    const auto expect = [&](double v, double beta) {
        const double x = v / c.v_max;
        return c.social_reward.cruise_weight * (2 * c.social_reward.cruise_speed * x - x * x) - beta * x;
    };
    CHECK(r.social_rewards[0] == Approx(expect(5.4, -1.0)).epsilon(1e-12));
    CHECK(r.social_rewards[1] == Approx(expect(6.2, 2.0)).epsilon(1e-12));
    // Per-step optimum of the utility sits at x* = c - beta / (2 k).
    for (double beta : {-1.0, 0.0, 1.0, 2.0, 3.0}) {
        const double xs = c.social_reward.cruise_speed - beta / (2 * c.social_reward.cruise_weight);
        CHECK(xs > 0.0);
        CHECK(xs < 1.0);
    }
}

TEST_CASE("rollout properties over random policies") {
    const Simulator sim(ScenarioConfig::t_intersection());
    const SoftmaxPolicy ego(FeatureMap::ego());
    const SoftmaxPolicy social(FeatureMap::social());
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
        const std::vector<double> betas{0.5, 1.5};
        const auto ep = rollout(sim, ego, social, betas, seed, 0.99);
        CHECK(ep.length == static_cast<int>(ep.steps.size()));
        CHECK(ep.length <= sim.config().max_steps);
        CHECK(ep.final_state.outcome == ep.outcome);
        if (ep.outcome == Outcome::Timeout) CHECK(ep.length == sim.config().max_steps);
        if (ep.outcome == Outcome::Success) CHECK(ep.final_state.vehicles[0].s >= sim.config().ego_goal - 1e-9);
        for (std::size_t t = 0; t < ep.steps.size(); ++t) {
            const auto& before = ep.steps[t].state;
            const auto& after = t + 1 < ep.steps.size() ? ep.steps[t + 1].state : ep.final_state;
            for (std::size_t i = 0; i < before.vehicles.size(); ++i) {
                if (!before.vehicles[i].active) continue;
                const double v = after.vehicles[i].v;
                CHECK(v >= 0.0);
                CHECK(v <= sim.config().v_max);
                CHECK(std::abs(after.vehicles[i].s - before.vehicles[i].s - v * sim.config().dt) <= 1e-9);
                CHECK(after.vehicles[i].s >= before.vehicles[i].s);
            }
            if (t + 1 < ep.steps.size()) CHECK_FALSE(before.terminal());
        }
        double g = 0, disc = 1;
        for (const auto& s : ep.steps) {
            g += disc * s.ego_reward;
            disc *= 0.99;
        }
        CHECK(ep.ego_return == Approx(g).epsilon(1e-12));
    }
}

TEST_CASE("rollout examples") {
    const Simulator sim(ScenarioConfig::t_intersection());
    const auto brake = constant_action_policy(FeatureMap::ego(), sim.brake_action());
    const SoftmaxPolicy social(FeatureMap::social());
    const std::vector<double> betas{1.0, 1.0};
    const auto ep = rollout(sim, brake, social, betas, 5, 0.99);
    CHECK(ep.outcome == Outcome::Timeout);

    const auto first = rollout(sim, SoftmaxPolicy(FeatureMap::ego()), social, betas, 8, 0.0);
    CHECK(first.ego_return == first.steps.front().ego_reward);

    const auto a = rollout(sim, SoftmaxPolicy(FeatureMap::ego()), social, betas, 77, 0.99);
    const auto b = rollout(sim, SoftmaxPolicy(FeatureMap::ego()), social, betas, 77, 0.99);
    CHECK(episode_to_jsonl(sim, a) == episode_to_jsonl(sim, b));
    const auto c = rollout(sim, SoftmaxPolicy(FeatureMap::ego()), social, betas, 78, 0.99);
    CHECK(episode_to_jsonl(sim, a) != episode_to_jsonl(sim, c));
}

TEST_CASE("episode JSON-lines layout") {
    const Simulator sim(ScenarioConfig::t_intersection());
    const auto ep = rollout(sim, SoftmaxPolicy(FeatureMap::ego()), SoftmaxPolicy(FeatureMap::social()),
                            std::vector<double>{0.0, 2.0}, 3, 0.99);
    const auto text = episode_to_jsonl(sim, ep);
    std::size_t lines = 0;
    for (char ch : text) lines += ch == '\n';
    CHECK(lines == ep.steps.size() + 2);
    CHECK(text.rfind("{\"betas\"", 0) == 0);
}
